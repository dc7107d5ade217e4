//! Split, augmentation, training loop, evaluation and history export.

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{AugmentConfig, AugmentError, LabeledImage};
use crate::dataset::TraceDataset;
use crate::nn::{Architecture, NnError};
use crate::raster::{stroke_image, RasterError, IMAGE_SIDE};

mod history;
mod metrics;
mod split;
mod train;

pub use history::{export_history, parse_history, EpochRecord, TrainHistory};
pub use metrics::{compute_metrics, Metrics};
pub use split::{split, split_indices};
pub use train::{evaluate, predict_probabilities, train};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0}")]
    Empty(&'static str),
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("history csv line {line}: {msg}")]
    History { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub split_fraction: f64,
    pub threshold: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub model: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 64,
            learning_rate: 0.001,
            split_fraction: 0.75,
            threshold: 0.5,
            seed: 0,
            augment: AugmentConfig::default(),
            model: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return bad(format!("split_fraction {} outside (0, 1)", self.split_fraction));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} outside (0, 1)", self.threshold));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.model.input_side != IMAGE_SIDE {
            return bad(format!(
                "model input_side {} must match the {IMAGE_SIDE}px stroke images",
                self.model.input_side
            ));
        }
        self.augment.validate()?;
        self.model.validate()?;
        Ok(())
    }
}

/// A rasterized trace ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub interval: NaiveDateTime,
    pub image: LabeledImage,
}

/// Rasterizes, downsamples and normalizes every trace.
pub fn prepare(data: &TraceDataset) -> Result<Vec<Sample>, PipelineError> {
    data.traces
        .iter()
        .map(|t| {
            Ok(Sample {
                interval: t.interval_start,
                image: LabeledImage {
                    image: stroke_image(t, data.floor_width, data.floor_height)?,
                    label: t.label,
                },
            })
        })
        .collect()
}
