use chrono::{Duration, NaiveDate, NaiveDateTime};
use proptest::prelude::*;
use wandernet::augment::{flip, Axis};
use wandernet::dataset::{parse_dataset, serialize_dataset, validate, HourTrace, PathPoint, TraceDataset};
use wandernet::pipeline::{compute_metrics, split_indices};
use wandernet::raster::{GrayImage, ScaleMode};

const W: u32 = 640;
const H: u32 = 480;

fn base() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2024, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap()
}

fn trace_strategy() -> impl Strategy<Value = (bool, Vec<(f64, f64, i64)>)> {
    (
        any::<bool>(),
        prop::collection::vec((0.0..W as f64, 0.0..H as f64, 0i64..60), 1..30),
    )
}

prop_compose! {
    fn dataset()(hours in prop::collection::btree_set(0i64..2000, 0..12),
                 traces in prop::collection::vec(trace_strategy(), 12)) -> TraceDataset {
        let traces = hours
            .into_iter()
            .zip(traces)
            .map(|(h, (label, pts))| {
                let start = base() + Duration::hours(h);
                HourTrace {
                    interval_start: start,
                    label,
                    points: pts
                        .into_iter()
                        .map(|(x, y, m)| PathPoint { x, y, timestamp: start + Duration::minutes(m), wandering: label })
                        .collect(),
                }
            })
            .collect();
        TraceDataset { floor_width: W, floor_height: H, traces }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dataset_roundtrip_is_exact(d in dataset()) {
        prop_assert!(validate(&d).is_empty());
        let back = parse_dataset(&serialize_dataset(&d), W, H).unwrap();
        prop_assert_eq!(&back, &d);
        prop_assert_eq!(serialize_dataset(&back), serialize_dataset(&d));
    }

    #[test]
    fn flip_is_an_involution(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let img = GrayImage::from_fn(w, h, ScaleMode::Unit, |x, y| {
            let v = (x as u64 * 31 + y as u64 * 17) ^ seed;
            (v % 1000) as f64 / 999.0
        });
        for axis in [Axis::Horizontal, Axis::Vertical] {
            prop_assert_eq!(&flip(&flip(&img, axis), axis), &img);
        }
    }

    #[test]
    fn metrics_match_a_brute_force_tally(
        rows in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 0..200),
        threshold in 0.01f64..0.99,
    ) {
        let preds: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let labels: Vec<bool> = rows.iter().map(|r| r.1).collect();
        let m = compute_metrics(&preds, &labels, threshold).unwrap();
        let count = |p: bool, y: bool| rows.iter().filter(|r| (r.0 >= threshold) == p && r.1 == y).count();
        prop_assert_eq!((m.tp, m.fp, m.fn_, m.tn), (count(true, true), count(true, false), count(false, true), count(false, false)));
        prop_assert_eq!(m.total(), rows.len());
        if m.precision > 0.0 && m.recall > 0.0 {
            let harmonic = 2.0 * m.precision * m.recall / (m.precision + m.recall);
            prop_assert!((m.f1 - harmonic).abs() <= 1e-12);
        }
    }

    #[test]
    fn split_is_a_stratified_partition(
        labels in prop::collection::vec(any::<bool>(), 1..300),
        fraction in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let (train, test) = split_indices(&labels, fraction, seed).unwrap();
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        prop_assert_eq!(train.len(), (labels.len() as f64 * fraction).round() as usize);
        for class in [true, false] {
            let n = labels.iter().filter(|&&l| l == class).count() as f64;
            let k = train.iter().filter(|&&i| labels[i] == class).count() as f64;
            prop_assert!((k - n * fraction).abs() <= 1.0, "class {}: {} of {}", class, k, n);
        }
        prop_assert_eq!(split_indices(&labels, fraction, seed).unwrap(), (train, test));
    }
}
