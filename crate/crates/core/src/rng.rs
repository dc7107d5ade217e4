//! Seeded, splittable random streams.
//!
//! Every random decision in the crate draws from a [`ChaCha8Rng`]. A stream is
//! identified by a root seed and a path of `u64` tags (for example
//! `[TRAIN, epoch, batch]`). The path is folded into a 64-bit key with the
//! SplitMix64 finalizer, and the key seeds ChaCha8 through
//! `SeedableRng::seed_from_u64`. Two streams with different paths are
//! independent, and a stream never depends on how many values were drawn from
//! any other stream, so work can be reordered or parallelized without changing
//! results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Tag namespaces used as the first path element.
pub mod tags {
    pub const SYNTH: u64 = 0x5359_4e54;
    pub const SPLIT: u64 = 0x5350_4c54;
    pub const AUGMENT: u64 = 0x4155_474d;
    pub const INIT: u64 = 0x494e_4954;
    pub const SHUFFLE: u64 = 0x5348_4646;
    pub const DROPOUT: u64 = 0x4452_4f50;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a seed and a tag path into one stream key.
pub fn derive_key(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &tag| splitmix64(acc ^ splitmix64(tag)))
}

/// Opens the stream for `seed` at `path`.
pub fn stream(seed: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_key(seed, path))
}
