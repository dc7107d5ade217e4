use std::fmt::Write as _;

use super::PipelineError;

pub const HISTORY_HEADER: &str = "epoch,train_loss,train_acc,test_loss,test_acc";

/// Scores of one completed epoch. Test fields are NaN when there is no test
/// set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Six significant digits in the style of C's `%g`: fixed notation for
/// decimal exponents in `[-4, 6)`, scientific otherwise, trailing zeros
/// dropped.
fn sig6(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..6).contains(&exp) {
        trim(&format!("{v:.*}", (5 - exp) as usize))
    } else {
        format!("{}e{exp}", trim(mantissa))
    }
}

pub fn export_history(h: &TrainHistory) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in &h.epochs {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch,
            sig6(r.train_loss),
            sig6(r.train_acc),
            sig6(r.test_loss),
            sig6(r.test_acc)
        );
    }
    out
}

/// Reads a file produced by [`export_history`].
pub fn parse_history(csv: &str) -> Result<TrainHistory, PipelineError> {
    let err = |line: usize, msg: String| PipelineError::History { line, msg };
    let mut lines = csv.lines();
    if lines.next() != Some(HISTORY_HEADER) {
        return Err(err(1, format!("expected header `{HISTORY_HEADER}`")));
    }
    let mut epochs = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(err(n, format!("expected 5 fields, found {}", fields.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| err(n, format!("`{s}`: {e}")));
        epochs.push(EpochRecord {
            epoch: fields[0].parse().map_err(|e| err(n, format!("`{}`: {e}", fields[0])))?,
            train_loss: num(fields[1])?,
            train_acc: num(fields[2])?,
            test_loss: num(fields[3])?,
            test_acc: num(fields[4])?,
        });
    }
    Ok(TrainHistory { epochs })
}
