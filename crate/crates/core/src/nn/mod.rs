//! Tensor and layer engine for the wandering classifier.
//!
//! The layer stack is fixed: `conv(3×3, 32) → relu → maxpool(2×2) → flatten →
//! fc1 → relu → dropout → fc2 → relu → fc3 → sigmoid`. Everything is generic
//! over [`Scalar`] so training runs in `f32` while gradient checks use `f64`.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use thiserror::Error;

mod adam;
mod io;
pub mod layers;
mod model;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use io::{load_weights, load_weights_checked, save_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};
pub use model::{Architecture, Backprop, CnnModel, Params, CONV_FILTERS};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("weights format error: {0}")]
    Format(String),
}

/// Train mode enables dropout; eval mode is a pure function of the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub trait Scalar: Float + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static {
    fn of(v: f64) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
}
