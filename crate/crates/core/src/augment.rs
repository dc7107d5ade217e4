//! Label-preserving augmentation: small rotations and axis flips.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{GrayImage, ScaleMode};
use crate::rng::{self, tags};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid augmentation config: {0}")]
    Config(String),
    #[error("rotation needs a unit-scale image")]
    ScaleMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub max_rotation_deg: f64,
    pub flip_h_prob: f64,
    pub flip_v_prob: f64,
    pub copies_per_image: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_rotation_deg: 3.0,
            flip_h_prob: 0.5,
            flip_v_prob: 0.5,
            copies_per_image: 4,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !(self.max_rotation_deg.is_finite() && self.max_rotation_deg >= 0.0) {
            return Err(AugmentError::Config("max_rotation_deg must be >= 0".into()));
        }
        if !prob(self.flip_h_prob) || !prob(self.flip_v_prob) {
            return Err(AugmentError::Config("flip probabilities must lie in [0, 1]".into()));
        }
        if self.copies_per_image == 0 {
            return Err(AugmentError::Config("copies_per_image must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Mirror left/right.
    Horizontal,
    /// Mirror top/bottom.
    Vertical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: GrayImage,
    pub label: bool,
}

pub fn flip(img: &GrayImage, axis: Axis) -> GrayImage {
    let rows = img.data.chunks_exact(img.width.max(1));
    let mut data = Vec::with_capacity(img.data.len());
    match axis {
        Axis::Horizontal => rows.for_each(|row| data.extend(row.iter().rev())),
        Axis::Vertical => rows.rev().for_each(|row| data.extend_from_slice(row)),
    }
    GrayImage {
        width: img.width,
        height: img.height,
        data,
        mode: img.mode,
    }
}

fn bilinear(img: &GrayImage, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let texel = |xi: f64, yi: f64| {
        if xi < 0.0 || yi < 0.0 || xi >= img.width as f64 || yi >= img.height as f64 {
            0.0
        } else {
            img.get(xi as usize, yi as usize)
        }
    };
    let top = texel(x0, y0) * (1.0 - fx) + texel(x0 + 1.0, y0) * fx;
    let bottom = texel(x0, y0 + 1.0) * (1.0 - fx) + texel(x0 + 1.0, y0 + 1.0) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Rotates about the image center by `angle_deg` (counter-clockwise on
/// screen), sampling bilinearly. Area rotated in from outside becomes 0.
pub fn rotate(img: &GrayImage, angle_deg: f64, max_deg: f64) -> Result<GrayImage, AugmentError> {
    if img.mode != ScaleMode::Unit {
        return Err(AugmentError::ScaleMode);
    }
    if !angle_deg.is_finite() || angle_deg.abs() > max_deg {
        return Err(AugmentError::Config(format!(
            "rotation of {angle_deg} degrees exceeds the {max_deg} degree limit"
        )));
    }
    if angle_deg == 0.0 {
        return Ok(img.clone());
    }
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let cx = (img.width as f64 - 1.0) / 2.0;
    let cy = (img.height as f64 - 1.0) / 2.0;
    let (w, h) = (img.width, img.height);

    // Output pixels sample the source at `c + M·(o - c)`. A sample can only be
    // non-zero within one pixel of a non-zero source pixel, so mark the
    // outputs mapping into each such neighbourhood and skip the rest.
    let mut needed = vec![false; w * h];
    for (i, _) in img.data.iter().enumerate().filter(|(_, &v)| v != 0.0) {
        let (u, v) = ((i % w) as f64, (i / w) as f64);
        let (mut lo_x, mut lo_y, mut hi_x, mut hi_y) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for (sx, sy) in [
            (u - 1.0, v - 1.0),
            (u + 1.0, v - 1.0),
            (u - 1.0, v + 1.0),
            (u + 1.0, v + 1.0),
        ] {
            let (dx, dy) = (sx - cx, sy - cy);
            let (ox, oy) = (cx + cos * dx + sin * dy, cy - sin * dx + cos * dy);
            lo_x = lo_x.min(ox);
            lo_y = lo_y.min(oy);
            hi_x = hi_x.max(ox);
            hi_y = hi_y.max(oy);
        }
        let x0 = (lo_x.floor() - 1.0).max(0.0) as usize;
        let y0 = (lo_y.floor() - 1.0).max(0.0) as usize;
        let x1 = ((hi_x.ceil() + 1.0).max(0.0) as usize).min(w - 1);
        let y1 = ((hi_y.ceil() + 1.0).max(0.0) as usize).min(h - 1);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for y in y0..=y1 {
            needed[y * w + x0..=y * w + x1].fill(true);
        }
    }

    let mut out = GrayImage::zeros(w, h, ScaleMode::Unit);
    for (i, _) in needed.iter().enumerate().filter(|(_, &n)| n) {
        let (x, y) = (i % w, i / w);
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        // Image y points down, so a screen-CCW turn is clockwise in (x, y).
        let sx = cx + cos * dx - sin * dy;
        let sy = cy + sin * dx + cos * dy;
        out.data[i] = bilinear(img, sx, sy).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Returns every source followed by `copies_per_image` augmented variants.
///
/// Source `i` draws from its own stream, so output is a pure function of the
/// inputs and `cfg.seed`.
pub fn augment_set(samples: &[LabeledImage], cfg: &AugmentConfig) -> Result<Vec<LabeledImage>, AugmentError> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(samples.len() * (cfg.copies_per_image + 1));
    for (i, s) in samples.iter().enumerate() {
        let mut r = rng::stream(cfg.seed, &[tags::AUGMENT, i as u64]);
        out.push(s.clone());
        for _ in 0..cfg.copies_per_image {
            let max = cfg.max_rotation_deg;
            let angle = if max > 0.0 { r.gen_range(-max..=max) } else { 0.0 };
            let flip_h = r.gen_bool(cfg.flip_h_prob);
            let flip_v = r.gen_bool(cfg.flip_v_prob);
            let mut image = rotate(&s.image, angle, max)?;
            if flip_h {
                image = flip(&image, Axis::Horizontal);
            }
            if flip_v {
                image = flip(&image, Axis::Vertical);
            }
            out.push(LabeledImage { image, label: s.label });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, ScaleMode::Unit, |x, y| ((x * 5 + y * 3) % 11) as f64 / 10.0)
    }

    /// Every output pixel sampled, no skipping.
    fn rotate_dense(img: &GrayImage, angle_deg: f64) -> GrayImage {
        let (sin, cos) = angle_deg.to_radians().sin_cos();
        let cx = (img.width as f64 - 1.0) / 2.0;
        let cy = (img.height as f64 - 1.0) / 2.0;
        GrayImage::from_fn(img.width, img.height, ScaleMode::Unit, |x, y| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            bilinear(img, cx + cos * dx - sin * dy, cy + sin * dx + cos * dy).clamp(0.0, 1.0)
        })
    }

    #[test]
    fn sparse_rotation_matches_dense_sampling() {
        let mut r = rng::stream(3, &[]);
        for case in 0..40 {
            let (w, h) = (r.gen_range(1..40), r.gen_range(1..40));
            let density = [0.01, 0.1, 0.5, 1.0][case % 4];
            let mut img = GrayImage::zeros(w, h, ScaleMode::Unit);
            for v in img.data.iter_mut() {
                if r.gen_bool(density) {
                    *v = r.gen_range(0.0..=1.0);
                }
            }
            let angle = r.gen_range(-3.0..=3.0);
            assert_eq!(
                rotate(&img, angle, 3.0).unwrap(),
                rotate_dense(&img, angle),
                "case {case}"
            );
        }
    }

    #[test]
    fn flip_two_by_one() {
        let mut img = GrayImage::zeros(2, 1, ScaleMode::Unit);
        img.data = vec![0.25, 0.75];
        assert_eq!(flip(&img, Axis::Horizontal).data, vec![0.75, 0.25]);
        assert_eq!(flip(&img, Axis::Vertical).data, vec![0.25, 0.75]);
    }

    #[test]
    fn flip_is_an_involution_and_keeps_sum() {
        let img = pattern(7, 5);
        for axis in [Axis::Horizontal, Axis::Vertical] {
            let once = flip(&img, axis);
            assert_eq!(once.sum(), img.sum());
            assert_eq!(flip(&once, axis), img);
        }
    }

    #[test]
    fn zero_rotation_is_identity() {
        let img = pattern(9, 9);
        assert_eq!(rotate(&img, 0.0, 3.0).unwrap(), img);
    }

    #[test]
    fn rotation_keeps_center_and_zero_images() {
        let mut img = GrayImage::zeros(9, 9, ScaleMode::Unit);
        img.set(4, 4, 0.8);
        for angle in [-3.0, -1.3, 0.7, 3.0] {
            let r = rotate(&img, angle, 3.0).unwrap();
            assert!((r.get(4, 4) - 0.8).abs() < 1e-6);
            let z = rotate(&GrayImage::zeros(16, 16, ScaleMode::Unit), angle, 3.0).unwrap();
            assert!(z.data.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn rotation_direction() {
        // A pixel right of center moves up on screen under a CCW turn.
        let mut img = GrayImage::zeros(41, 41, ScaleMode::Unit);
        img.set(40, 20, 1.0);
        let r = rotate(&img, 3.0, 3.0).unwrap();
        let (mut wy, mut total) = (0.0, 0.0);
        for (x, y) in r.lit_pixels() {
            wy += y as f64 * r.get(x, y);
            total += r.get(x, y);
        }
        assert!(wy / total < 20.0);
    }

    #[test]
    fn rotation_limits_and_modes() {
        let img = pattern(8, 8);
        assert!(matches!(rotate(&img, 3.5, 3.0), Err(AugmentError::Config(_))));
        assert!(matches!(rotate(&img, f64::NAN, 3.0), Err(AugmentError::Config(_))));
        let raw = GrayImage::zeros(8, 8, ScaleMode::Raw);
        assert!(matches!(rotate(&raw, 1.0, 3.0), Err(AugmentError::ScaleMode)));
    }

    #[test]
    fn augment_counts_labels_and_determinism() {
        let samples: Vec<LabeledImage> = (0..10)
            .map(|i| LabeledImage {
                image: pattern(16, 16),
                label: i % 3 == 0,
            })
            .collect();
        let cfg = AugmentConfig {
            copies_per_image: 3,
            seed: 9,
            ..AugmentConfig::default()
        };
        let out = augment_set(&samples, &cfg).unwrap();
        assert_eq!(out.len(), 40);
        let positives = out.iter().filter(|s| s.label).count();
        assert_eq!(positives, 4 * samples.iter().filter(|s| s.label).count());
        for (i, s) in out.iter().enumerate() {
            assert_eq!(s.label, samples[i / 4].label);
        }
        assert_eq!(out, augment_set(&samples, &cfg).unwrap());
    }

    #[test]
    fn degenerate_config_copies_sources() {
        let samples = vec![LabeledImage {
            image: pattern(12, 10),
            label: true,
        }];
        let cfg = AugmentConfig {
            max_rotation_deg: 0.0,
            flip_h_prob: 0.0,
            flip_v_prob: 0.0,
            ..AugmentConfig::default()
        };
        let out = augment_set(&samples, &cfg).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|s| *s == samples[0]));
    }

    #[test]
    fn invalid_config() {
        let cfg = AugmentConfig {
            copies_per_image: 0,
            ..AugmentConfig::default()
        };
        assert!(augment_set(&[], &cfg).is_err());
        let cfg = AugmentConfig {
            flip_v_prob: 1.5,
            ..AugmentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
