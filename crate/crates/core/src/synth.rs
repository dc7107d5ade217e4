//! Procedural generation of labeled hour traces.
//!
//! Four geometric archetypes of indoor travel are produced:
//!
//! * `Direct`: one near-straight leg from a start to an end point. Jitter is
//!   applied perpendicular to the leg only, so progress along the leg is
//!   strictly monotone.
//! * `Pacing`: back-and-forth legs between two anchors, with 3 to 6 reversals.
//! * `Lapping`: two or three full traversals of an elliptical loop; the final
//!   point closes the loop onto the first.
//! * `Random`: 4 to 6 waypoints visited once each along straight legs, turning
//!   between 30 and 100 degrees at each waypoint.
//!
//! Only `Direct` is labeled normal. Geometry is sampled inside the floor plan
//! shrunk by `margin` on every side; jitter is a normal truncated at three
//! standard deviations, and the margin is raised to at least `3 * jitter + 1`
//! so jittered points never leave the floor.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use chrono::{Duration, NaiveDateTime};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{hour_of, parse_timestamp, HourTrace, PathPoint, TraceDataset};
use crate::rng::{self, tags, Rng};

const MAX_ATTEMPTS: usize = 512;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error("could not fit a {kind:?} trace inside the floor plan after {attempts} attempts")]
    Geometry { kind: PatternKind, attempts: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    #[serde(alias = "normal")]
    Direct,
    Pacing,
    Lapping,
    Random,
}

impl PatternKind {
    pub const ALL: [PatternKind; 4] = [
        PatternKind::Direct,
        PatternKind::Pacing,
        PatternKind::Lapping,
        PatternKind::Random,
    ];

    pub fn is_wandering(self) -> bool {
        !matches!(self, PatternKind::Direct)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointsRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub floor_width: u32,
    pub floor_height: u32,
    pub seed: u64,
    pub counts: BTreeMap<PatternKind, usize>,
    /// Mean spacing of consecutive points, in pixels.
    pub step_length: f64,
    /// Standard deviation of positional noise, in pixels.
    pub jitter: f64,
    pub points_per_trace: PointsRange,
    /// Keep-out band along the floor edges, in pixels.
    pub margin: f64,
    /// Interval of the first generated trace; later traces follow hourly.
    pub start: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            floor_width: 640,
            floor_height: 480,
            seed: 0,
            counts: train_test_counts(),
            step_length: 10.0,
            jitter: 2.0,
            points_per_trace: PointsRange { min: 20, max: 120 },
            margin: 32.0,
            start: "2024-01-01T00:00".to_string(),
        }
    }
}

fn counts(direct: usize, pacing: usize, lapping: usize, random: usize) -> BTreeMap<PatternKind, usize> {
    BTreeMap::from([
        (PatternKind::Direct, direct),
        (PatternKind::Pacing, pacing),
        (PatternKind::Lapping, lapping),
        (PatternKind::Random, random),
    ])
}

/// 200 hours: 100 normal, 59 lapping, 11 random, 30 pacing.
pub fn train_test_counts() -> BTreeMap<PatternKind, usize> {
    counts(100, 30, 59, 11)
}

/// 20 hours: 10 normal, 7 lapping, 2 random, 1 pacing.
pub fn validation_counts() -> BTreeMap<PatternKind, usize> {
    counts(10, 1, 7, 2)
}

impl SynthConfig {
    pub fn validation(seed: u64) -> Self {
        Self {
            seed,
            counts: validation_counts(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if !(self.step_length.is_finite() && self.step_length > 0.0) {
            return bad("step_length must be > 0");
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return bad("jitter must be >= 0");
        }
        if self.points_per_trace.min < 2 {
            return bad("points_per_trace.min must be >= 2");
        }
        if self.points_per_trace.max < self.points_per_trace.min {
            return bad("points_per_trace.max must be >= points_per_trace.min");
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return bad("margin must be >= 0");
        }
        if self.floor_width == 0 || self.floor_height == 0 {
            return bad("floor dimensions must be positive");
        }
        self.start_interval()?;
        Ok(())
    }

    fn start_interval(&self) -> Result<NaiveDateTime, SynthError> {
        parse_timestamp(&self.start)
            .map(|t| hour_of(&t))
            .map_err(|e| SynthError::Config(format!("start {:?}: {e}", self.start)))
    }

    fn effective_margin(&self) -> f64 {
        self.margin.max(3.0 * self.jitter + 1.0)
    }
}

/// Axis-aligned box points are sampled from.
#[derive(Debug, Clone, Copy)]
struct Region {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl Region {
    fn contains(&self, p: (f64, f64)) -> bool {
        p.0 >= self.x0 && p.0 <= self.x1 && p.1 >= self.y0 && p.1 <= self.y1
    }

    fn sample(&self, rng: &mut Rng) -> (f64, f64) {
        (rng.gen_range(self.x0..=self.x1), rng.gen_range(self.y0..=self.y1))
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Samples each leg at roughly `step` spacing, vertices included.
fn sample_legs(vertices: &[(f64, f64)], step: f64) -> Vec<(f64, f64)> {
    let mut out = vec![vertices[0]];
    for leg in vertices.windows(2) {
        let (a, b) = (leg[0], leg[1]);
        let k = ((dist(a, b) / step).round() as usize).max(1);
        for i in 1..=k {
            let t = i as f64 / k as f64;
            out.push((a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t));
        }
    }
    out
}

fn truncated_normal(rng: &mut Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 3.0 {
            return z * sigma;
        }
    }
}

fn jitter_all(points: &mut [(f64, f64)], sigma: f64, rng: &mut Rng) {
    for p in points.iter_mut() {
        p.0 += truncated_normal(rng, sigma);
        p.1 += truncated_normal(rng, sigma);
    }
}

fn random_direction(rng: &mut Rng) -> (f64, f64) {
    let a = rng.gen_range(0.0..TAU);
    (a.cos(), a.sin())
}

fn direct_path(cfg: &SynthConfig, region: Region, rng: &mut Rng) -> Option<Vec<(f64, f64)>> {
    let step = cfg.step_length;
    let min_len = ((cfg.points_per_trace.min - 1) as f64 * step).max(4.0 * step);
    let start = region.sample(rng);
    let end = region.sample(rng);
    let len = dist(start, end);
    if len < min_len {
        return None;
    }
    let mut pts = sample_legs(&[start, end], step);
    let (ux, uy) = ((end.0 - start.0) / len, (end.1 - start.1) / len);
    for p in pts.iter_mut() {
        let off = truncated_normal(rng, cfg.jitter);
        p.0 -= uy * off;
        p.1 += ux * off;
    }
    Some(pts)
}

fn pacing_path(cfg: &SynthConfig, region: Region, rng: &mut Rng) -> Option<Vec<(f64, f64)>> {
    let step = cfg.step_length;
    let a = region.sample(rng);
    let d = rng.gen_range(6.0 * step..=20.0 * step);
    let (dx, dy) = random_direction(rng);
    let b = (a.0 + dx * d, a.1 + dy * d);
    if !region.contains(b) {
        return None;
    }
    let reversals = rng.gen_range(3..=6usize);
    let vertices: Vec<(f64, f64)> = (0..=reversals + 1).map(|i| if i % 2 == 0 { a } else { b }).collect();
    let mut pts = sample_legs(&vertices, step);
    jitter_all(&mut pts, cfg.jitter, rng);
    Some(pts)
}

fn lapping_path(cfg: &SynthConfig, region: Region, rng: &mut Rng) -> Option<Vec<(f64, f64)>> {
    let step = cfg.step_length;
    let laps = rng.gen_range(2..=3usize);
    let semi_major = rng.gen_range(4.0 * step..=12.0 * step);
    let semi_minor = semi_major * rng.gen_range(0.6..=1.0);
    let tilt = rng.gen_range(0.0..PI);
    let phase = rng.gen_range(0.0..TAU);
    let turn = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let center = region.sample(rng);

    // Ramanujan's approximation of the ellipse perimeter.
    let (a, b) = (semi_major, semi_minor);
    let perimeter = PI * (3.0 * (a + b) - ((3.0 * a + b) * (a + 3.0 * b)).sqrt());
    let per_lap = ((perimeter / step).round() as usize).max(8);

    let (ct, st) = (tilt.cos(), tilt.sin());
    let mut pts = Vec::with_capacity(laps * per_lap + 1);
    for i in 0..=laps * per_lap {
        let theta = phase + turn * TAU * (i % per_lap) as f64 / per_lap as f64;
        let (ex, ey) = (a * theta.cos(), b * theta.sin());
        let p = (center.0 + ex * ct - ey * st, center.1 + ex * st + ey * ct);
        if !region.contains(p) {
            return None;
        }
        pts.push(p);
    }
    jitter_all(&mut pts, cfg.jitter, rng);
    let first = pts[0];
    *pts.last_mut().expect("loop has points") = first;
    Some(pts)
}

fn random_path(cfg: &SynthConfig, region: Region, rng: &mut Rng) -> Option<Vec<(f64, f64)>> {
    let step = cfg.step_length;
    let min_leg = 6.0 * step;
    let waypoints_wanted = rng.gen_range(4..=6usize);
    let mut waypoints = vec![region.sample(rng)];
    let mut heading = rng.gen_range(0.0..TAU);

    while waypoints.len() < waypoints_wanted {
        let last = *waypoints.last().expect("non-empty");
        let mut placed = false;
        for _ in 0..32 {
            let h = if waypoints.len() == 1 {
                heading
            } else {
                let turn = rng.gen_range(30f64..=100.0).to_radians();
                heading + if rng.gen_bool(0.5) { turn } else { -turn }
            };
            let len = rng.gen_range(min_leg..=25.0 * step);
            let p = (last.0 + h.cos() * len, last.1 + h.sin() * len);
            if region.contains(p) && waypoints.iter().all(|&w| dist(w, p) > min_leg) {
                waypoints.push(p);
                heading = h;
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    let mut pts = sample_legs(&waypoints, step);
    jitter_all(&mut pts, cfg.jitter, rng);
    Some(pts)
}

/// Generates one trace of `kind` for the hour starting at `interval_start`.
pub fn gen_trace(
    kind: PatternKind,
    cfg: &SynthConfig,
    interval_start: NaiveDateTime,
    rng: &mut Rng,
) -> Result<HourTrace, SynthError> {
    cfg.validate()?;
    let m = cfg.effective_margin();
    let region = Region {
        x0: m,
        y0: m,
        x1: cfg.floor_width as f64 - m,
        y1: cfg.floor_height as f64 - m,
    };
    let geometry_error = SynthError::Geometry {
        kind,
        attempts: MAX_ATTEMPTS,
    };
    if region.x1 <= region.x0 || region.y1 <= region.y0 {
        return Err(geometry_error);
    }

    let range = cfg.points_per_trace;
    for _ in 0..MAX_ATTEMPTS {
        let path = match kind {
            PatternKind::Direct => direct_path(cfg, region, rng),
            PatternKind::Pacing => pacing_path(cfg, region, rng),
            PatternKind::Lapping => lapping_path(cfg, region, rng),
            PatternKind::Random => random_path(cfg, region, rng),
        };
        let Some(path) = path else { continue };
        if path.len() < range.min || path.len() > range.max {
            continue;
        }
        let n = path.len() as i64;
        let label = kind.is_wandering();
        let points = path
            .into_iter()
            .enumerate()
            .map(|(i, (x, y))| PathPoint {
                x,
                y,
                timestamp: interval_start + Duration::minutes(i as i64 * 60 / n),
                wandering: label,
            })
            .collect();
        return Ok(HourTrace {
            interval_start,
            points,
            label,
        });
    }
    Err(geometry_error)
}

/// Generates `counts[k]` traces of every kind, one per consecutive hour.
///
/// Kinds are interleaved by a seeded shuffle, and trace `i` draws from its own
/// stream, so the result is a pure function of the config.
pub fn gen_dataset(cfg: &SynthConfig) -> Result<TraceDataset, SynthError> {
    cfg.validate()?;
    let start = cfg.start_interval()?;
    let traces = kind_schedule(cfg)
        .iter()
        .enumerate()
        .map(|(i, &kind)| {
            let mut r = rng::stream(cfg.seed, &[tags::SYNTH, 1, i as u64]);
            gen_trace(kind, cfg, start + Duration::hours(i as i64), &mut r)
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(TraceDataset {
        floor_width: cfg.floor_width,
        floor_height: cfg.floor_height,
        traces,
    })
}

/// Like [`gen_dataset`] but also returns the generating kind of each trace.
pub fn gen_labeled_kinds(cfg: &SynthConfig) -> Result<(TraceDataset, Vec<PatternKind>), SynthError> {
    Ok((gen_dataset(cfg)?, kind_schedule(cfg)))
}

fn kind_schedule(cfg: &SynthConfig) -> Vec<PatternKind> {
    let mut kinds: Vec<PatternKind> = cfg
        .counts
        .iter()
        .flat_map(|(&k, &n)| std::iter::repeat_n(k, n))
        .collect();
    kinds.shuffle(&mut rng::stream(cfg.seed, &[tags::SYNTH, 0]));
    kinds
}
