//! Geometric re-classification of synthetic traces, written without reference
//! to the generator.

use wandernet::dataset::HourTrace;
use wandernet::synth::PatternKind;

type P = (f64, f64);

fn pts(t: &HourTrace) -> Vec<P> {
    t.points.iter().map(|p| (p.x, p.y)).collect()
}

/// Consecutive displacements pointing more than 120° apart.
pub fn reversals(path: &[P]) -> usize {
    let d: Vec<P> = path.windows(2).map(|w| (w[1].0 - w[0].0, w[1].1 - w[0].1)).collect();
    d.windows(2)
        .filter(|w| {
            let (a, b) = (w[0], w[1]);
            let (na, nb) = (a.0.hypot(a.1), b.0.hypot(b.1));
            na > 0.0 && nb > 0.0 && (a.0 * b.0 + a.1 * b.1) / (na * nb) < -0.5
        })
        .count()
}

/// Signed number of turns the path makes around its centroid.
pub fn winding(path: &[P]) -> f64 {
    let n = path.len() as f64;
    let c = (
        path.iter().map(|p| p.0).sum::<f64>() / n,
        path.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let angles: Vec<f64> = path.iter().map(|p| (p.1 - c.1).atan2(p.0 - c.0)).collect();
    let mut total = 0.0;
    for w in angles.windows(2) {
        let mut d = w[1] - w[0];
        while d > std::f64::consts::PI {
            d -= std::f64::consts::TAU;
        }
        while d <= -std::f64::consts::PI {
            d += std::f64::consts::TAU;
        }
        total += d;
    }
    total / std::f64::consts::TAU
}

fn point_segment_distance(p: P, a: P, b: P) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return (p.0 - a.0).hypot(p.1 - a.1);
    }
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
}

/// Ramer–Douglas–Peucker vertex count.
pub fn simplified_vertices(path: &[P], eps: f64) -> usize {
    fn rdp(path: &[P], eps: f64) -> usize {
        if path.len() < 3 {
            return path.len();
        }
        let (a, b) = (path[0], path[path.len() - 1]);
        let (idx, dmax) = path[1..path.len() - 1]
            .iter()
            .enumerate()
            .map(|(i, &p)| (i + 1, point_segment_distance(p, a, b)))
            .fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if dmax > eps {
            rdp(&path[..=idx], eps) + rdp(&path[idx..], eps) - 1
        } else {
            2
        }
    }
    rdp(path, eps)
}

/// Pacing if the path reverses at least three times, lapping if it circles
/// its centroid at least one and a half times, random if it has an interior
/// waypoint after simplification, direct otherwise.
pub fn classify(t: &HourTrace, jitter: f64) -> PatternKind {
    let p = pts(t);
    if reversals(&p) >= 3 {
        PatternKind::Pacing
    } else if winding(&p).abs() >= 1.5 {
        PatternKind::Lapping
    } else if simplified_vertices(&p, 4.0 * jitter + 1.0) >= 3 {
        PatternKind::Random
    } else {
        PatternKind::Direct
    }
}
