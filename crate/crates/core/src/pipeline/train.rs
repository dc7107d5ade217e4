use rand::seq::SliceRandom;

use super::{compute_metrics, EpochRecord, Metrics, PipelineError, Sample, TrainConfig, TrainHistory};
use crate::augment::{augment_set, AugmentConfig, LabeledImage};
use crate::nn::layers::bce_loss;
use crate::nn::{Adam, AdamConfig, CnnModel, Mode, Params, Tensor};
use crate::raster::GrayImage;
use crate::rng::{self, tags};

const EVAL_BATCH: usize = 64;

fn batch_tensor(images: &[&GrayImage]) -> Result<Tensor<f32>, PipelineError> {
    let (w, h) = (images[0].width, images[0].height);
    let mut data = Vec::with_capacity(images.len() * w * h);
    for img in images {
        data.extend(img.data.iter().map(|&v| v as f32));
    }
    Ok(Tensor::new(vec![images.len(), h, w, 1], data)?)
}

fn target(label: bool) -> f32 {
    if label {
        1.0
    } else {
        0.0
    }
}

/// Eval-mode probabilities, in input order.
pub fn predict_probabilities(model: &CnnModel<f32>, images: &[&GrayImage]) -> Result<Vec<f64>, PipelineError> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_BATCH) {
        let probs = model.predict(&batch_tensor(chunk)?)?;
        out.extend(probs.data().iter().map(|&p| p as f64));
    }
    Ok(out)
}

/// Mean cross-entropy and metrics over `samples`.
fn score(model: &CnnModel<f32>, samples: &[Sample], threshold: f64) -> Result<(f64, Metrics), PipelineError> {
    let images: Vec<&GrayImage> = samples.iter().map(|s| &s.image.image).collect();
    let labels: Vec<bool> = samples.iter().map(|s| s.image.label).collect();
    let probs = predict_probabilities(model, &images)?;
    let targets: Vec<f64> = labels.iter().map(|&l| target(l) as f64).collect();
    let (loss, _) = bce_loss(&probs, &targets)?;
    Ok((loss, compute_metrics(&probs, &labels, threshold)?))
}

pub fn evaluate(model: &CnnModel<f32>, samples: &[Sample], threshold: f64) -> Result<Metrics, PipelineError> {
    if samples.is_empty() {
        return Err(PipelineError::Empty("cannot evaluate on an empty dataset"));
    }
    Ok(score(model, samples, threshold)?.1)
}

/// Mini-batch Adam training.
///
/// Every epoch augments the training images afresh, shuffles the expanded
/// set and walks it in batches of `cfg.batch_size`. Train loss and accuracy
/// are averaged over those batches with dropout active; test scores come
/// from an eval-mode pass over the unaugmented test set.
pub fn train(
    mut model: CnnModel<f32>,
    train_set: &[Sample],
    test_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<(CnnModel<f32>, TrainHistory), PipelineError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(PipelineError::Empty("training set is empty"));
    }
    let sources: Vec<LabeledImage> = train_set.iter().map(|s| s.image.clone()).collect();
    let mut opt = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
        &model.params.tensors(),
    );
    let mut grads = Params::zeros(model.arch());
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        let e = epoch as u64;
        let aug = AugmentConfig {
            seed: rng::derive_key(cfg.seed, &[tags::AUGMENT, cfg.augment.seed, e]),
            ..cfg.augment.clone()
        };
        let expanded = augment_set(&sources, &aug)?;
        let mut order: Vec<usize> = (0..expanded.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, &[tags::SHUFFLE, e]));
        let mut dropout_rng = rng::stream(cfg.seed, &[tags::DROPOUT, e]);

        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let images: Vec<&GrayImage> = chunk.iter().map(|&i| &expanded[i].image).collect();
            let targets: Vec<f32> = chunk.iter().map(|&i| target(expanded[i].label)).collect();
            let batch = batch_tensor(&images)?;
            let (loss, predictions) =
                model.loss_and_grad_into(&batch, &targets, Mode::Train, &mut dropout_rng, &mut grads)?;
            opt.step(&mut model.params.tensors_mut(), &grads.tensors())?;
            loss_sum += loss as f64 * chunk.len() as f64;
            correct += predictions
                .iter()
                .zip(&targets)
                .filter(|(&p, &y)| (p as f64 >= cfg.threshold) == (y == 1.0))
                .count();
        }
        let n = expanded.len() as f64;
        let (test_loss, test_acc) = if test_set.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let (l, m) = score(&model, test_set, cfg.threshold)?;
            (l, m.accuracy)
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            test_loss,
            test_acc,
        };
        log::info!(
            "epoch {}/{}: train loss {:.4} acc {:.3}, test loss {:.4} acc {:.3}",
            record.epoch,
            cfg.epochs,
            record.train_loss,
            record.train_acc,
            record.test_loss,
            record.test_acc
        );
        history.epochs.push(record);
    }
    Ok((model, history))
}
