//! Trace data model and the JSON interchange format.
//!
//! On the wire a dataset is a flat array of points:
//!
//! ```json
//! [{"x": 120.5, "y": 88, "date": "2024-01-01T14:05", "stress": true}, ...]
//! ```
//!
//! `x`/`y` are floor-plan pixel coordinates measured from the upper-left
//! corner, `date` is a naive local timestamp at minute resolution and `stress`
//! is the wandering label. Points are grouped into one [`HourTrace`] per
//! `(date, hour)`; file order inside a group is movement order. The floor-plan
//! size is not part of the wire format and is supplied by the caller.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Wire format of the `date` field.
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("malformed JSON: {0}")]
    Parse(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("label conflict in interval {interval}: point {point} has stress={found}, earlier points have stress={expected}")]
    LabelConflict {
        interval: String,
        point: usize,
        expected: bool,
        found: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub x: f64,
    pub y: f64,
    pub timestamp: NaiveDateTime,
    pub wandering: bool,
}

/// One hour of movement, points in the order they were visited.
#[derive(Debug, Clone, PartialEq)]
pub struct HourTrace {
    pub interval_start: NaiveDateTime,
    pub points: Vec<PathPoint>,
    pub label: bool,
}

impl HourTrace {
    pub fn interval_label(&self) -> String {
        format_timestamp(&self.interval_start)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceDataset {
    pub floor_width: u32,
    pub floor_height: u32,
    pub traces: Vec<HourTrace>,
}

impl TraceDataset {
    pub fn empty(floor_width: u32, floor_height: u32) -> Self {
        Self {
            floor_width,
            floor_height,
            traces: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    /// `(wandering, normal)` trace counts.
    pub fn label_counts(&self) -> (usize, usize) {
        let wandering = self.traces.iter().filter(|t| t.label).count();
        (wandering, self.traces.len() - wandering)
    }

    pub fn point_count(&self) -> usize {
        self.traces.iter().map(|t| t.points.len()).sum()
    }
}

/// Start of the hour containing `ts`.
pub fn hour_of(ts: &NaiveDateTime) -> NaiveDateTime {
    ts.date()
        .and_hms_opt(ts.hour(), 0, 0)
        .expect("hour of a valid timestamp is valid")
}

pub fn format_timestamp(ts: &NaiveDateTime) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime, chrono::ParseError> {
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
}

#[derive(Serialize, Deserialize)]
struct WirePoint {
    x: f64,
    y: f64,
    date: String,
    stress: bool,
}

/// Parses a point array and groups it into hour traces ordered by interval.
pub fn parse_dataset(bytes: &[u8], floor_width: u32, floor_height: u32) -> Result<TraceDataset, DatasetError> {
    let wire: Vec<WirePoint> = serde_json::from_slice(bytes).map_err(|e| {
        if e.is_data() {
            DatasetError::Schema(e.to_string())
        } else {
            DatasetError::Parse(e.to_string())
        }
    })?;

    let mut groups: BTreeMap<NaiveDateTime, HourTrace> = BTreeMap::new();
    for (index, p) in wire.into_iter().enumerate() {
        let timestamp = parse_timestamp(&p.date).map_err(|e| {
            DatasetError::Schema(format!(
                "point {index}: date {:?} is not YYYY-MM-DDTHH:MM ({e})",
                p.date
            ))
        })?;
        let interval_start = hour_of(&timestamp);
        let trace = groups.entry(interval_start).or_insert_with(|| HourTrace {
            interval_start,
            points: Vec::new(),
            label: p.stress,
        });
        if trace.label != p.stress {
            return Err(DatasetError::LabelConflict {
                interval: format_timestamp(&interval_start),
                point: index,
                expected: trace.label,
                found: p.stress,
            });
        }
        trace.points.push(PathPoint {
            x: p.x,
            y: p.y,
            timestamp,
            wandering: p.stress,
        });
    }

    Ok(TraceDataset {
        floor_width,
        floor_height,
        traces: groups.into_values().collect(),
    })
}

/// Emits the flat point array, traces in interval order.
pub fn serialize_dataset(d: &TraceDataset) -> Vec<u8> {
    let mut order: Vec<&HourTrace> = d.traces.iter().collect();
    order.sort_by_key(|t| t.interval_start);
    let wire: Vec<WirePoint> = order
        .into_iter()
        .flat_map(|t| t.points.iter())
        .map(|p| WirePoint {
            x: p.x,
            y: p.y,
            date: format_timestamp(&p.timestamp),
            stress: p.wandering,
        })
        .collect();
    serde_json::to_vec(&wire).expect("point array always serializes")
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    OutOfBounds { trace: usize, point: usize, x: f64, y: f64 },
    EmptyTrace { trace: usize },
    DuplicateInterval { trace: usize, first: usize },
    LabelConflict { trace: usize, point: usize },
    IntervalMismatch { trace: usize, point: usize },
}

impl Violation {
    pub fn trace(&self) -> usize {
        match *self {
            Violation::OutOfBounds { trace, .. }
            | Violation::EmptyTrace { trace }
            | Violation::DuplicateInterval { trace, .. }
            | Violation::LabelConflict { trace, .. }
            | Violation::IntervalMismatch { trace, .. } => trace,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OutOfBounds { trace, point, x, y } => {
                write!(f, "trace {trace} point {point}: ({x}, {y}) outside the floor plan")
            }
            Violation::EmptyTrace { trace } => write!(f, "trace {trace} has no points"),
            Violation::DuplicateInterval { trace, first } => {
                write!(f, "trace {trace} repeats the interval of trace {first}")
            }
            Violation::LabelConflict { trace, point } => {
                write!(
                    f,
                    "trace {trace} point {point}: wandering flag differs from the trace label"
                )
            }
            Violation::IntervalMismatch { trace, point } => {
                write!(f, "trace {trace} point {point}: timestamp outside the trace's hour")
            }
        }
    }
}

/// Lists every invariant violation; empty iff the dataset is valid.
pub fn validate(d: &TraceDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen: BTreeMap<NaiveDateTime, usize> = BTreeMap::new();
    let (w, h) = (d.floor_width as f64, d.floor_height as f64);

    for (ti, t) in d.traces.iter().enumerate() {
        if let Some(&first) = seen.get(&t.interval_start) {
            out.push(Violation::DuplicateInterval { trace: ti, first });
        } else {
            seen.insert(t.interval_start, ti);
        }
        if t.points.is_empty() {
            out.push(Violation::EmptyTrace { trace: ti });
        }
        for (pi, p) in t.points.iter().enumerate() {
            let inside = p.x >= 0.0 && p.x < w && p.y >= 0.0 && p.y < h;
            if !inside {
                out.push(Violation::OutOfBounds {
                    trace: ti,
                    point: pi,
                    x: p.x,
                    y: p.y,
                });
            }
            if p.wandering != t.label {
                out.push(Violation::LabelConflict { trace: ti, point: pi });
            }
            if hour_of(&p.timestamp) != t.interval_start {
                out.push(Violation::IntervalMismatch { trace: ti, point: pi });
            }
        }
    }
    out
}
