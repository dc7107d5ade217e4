use rand::seq::SliceRandom;

use super::PipelineError;
use crate::dataset::TraceDataset;
use crate::rng::{self, tags};

/// Stratified split of `labels` into train and test index sets, both
/// ascending.
///
/// The train set gets `round(n · fraction)` items. Each class first receives
/// `floor(n_c · fraction)`; the remaining slots go to the classes with the
/// largest fractional parts, wandering first on ties. Members are drawn from
/// a per-class shuffle.
pub fn split_indices(labels: &[bool], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), PipelineError> {
    if labels.is_empty() {
        return Err(PipelineError::Empty("cannot split an empty dataset"));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(PipelineError::Config(format!(
            "split fraction {fraction} outside (0, 1)"
        )));
    }
    let classes = [true, false];
    let members: Vec<Vec<usize>> = classes
        .iter()
        .map(|&c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
        .collect();
    for (c, m) in classes.iter().zip(&members) {
        if m.is_empty() {
            let name = if *c { "wandering" } else { "normal" };
            log::warn!("split: no {name} traces, stratification covers one class only");
        }
    }

    let total = (labels.len() as f64 * fraction).round() as usize;
    let exact: Vec<f64> = members.iter().map(|m| m.len() as f64 * fraction).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..classes.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut left = total.saturating_sub(quota.iter().sum());
    for &c in order.iter().cycle().take(2 * classes.len()) {
        if left == 0 {
            break;
        }
        if quota[c] < members[c].len() {
            quota[c] += 1;
            left -= 1;
        }
    }

    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (c, m) in members.iter().enumerate() {
        let mut m = m.clone();
        m.shuffle(&mut rng::stream(seed, &[tags::SPLIT, c as u64]));
        train.extend_from_slice(&m[..quota[c]]);
        test.extend_from_slice(&m[quota[c]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// [`split_indices`] applied to the traces of a dataset.
pub fn split(data: &TraceDataset, fraction: f64, seed: u64) -> Result<(TraceDataset, TraceDataset), PipelineError> {
    let labels: Vec<bool> = data.traces.iter().map(|t| t.label).collect();
    let (train, test) = split_indices(&labels, fraction, seed)?;
    let pick = |idx: &[usize]| TraceDataset {
        floor_width: data.floor_width,
        floor_height: data.floor_height,
        traces: idx.iter().map(|&i| data.traces[i].clone()).collect(),
    };
    Ok((pick(&train), pick(&test)))
}
