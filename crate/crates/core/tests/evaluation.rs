mod common;

use common::brute_force_tp;
use hlfr::evaluation::{
    f_measure, g_mean, histogram, kappa_plus, match_detections, pool_reports,
    precision_recall_curve, prequential_series, Prequential,
};
use hlfr::hht::Prediction;
use proptest::prelude::*;

fn sorted_unique(v: Vec<usize>) -> Vec<usize> {
    let mut v = v;
    v.sort_unstable();
    v.dedup();
    v
}

/// Direct recomputation of the windowed metrics at the last index.
fn naive_metrics(log: &[Prediction], window: usize) -> (f64, f64, f64, Option<f64>) {
    let start = log.len().saturating_sub(window);
    let slice = &log[start..];
    let count = |y: u8, yhat: u8| slice.iter().filter(|p| p.y == y && p.yhat == yhat).count() as f64;
    let (tp, tn, fp, fn_) = (count(1, 1), count(0, 0), count(0, 1), count(1, 0));
    let n = slice.len() as f64;
    let acc = (tp + tn) / n;
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let specificity = if tn + fp > 0.0 { tn / (tn + fp) } else { 0.0 };
    let f = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let g = (recall * specificity).sqrt();
    let (mut hits, mut m) = (0.0, 0.0);
    for i in start.max(1)..log.len() {
        m += 1.0;
        hits += f64::from(u8::from(log[i - 1].y == log[i].y));
    }
    let kappa = if m > 0.0 && hits < m {
        let pe = hits / m;
        Some((acc - pe) / (1.0 - pe))
    } else {
        None
    };
    (acc, f, g, kappa)
}

#[test]
fn worked_metric_values() {
    assert!((kappa_plus(0.9, 0.8).unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(kappa_plus(0.9, 1.0), None);
    assert_eq!(f_measure(1.0, 1.0), 1.0);
    assert_eq!(f_measure(0.0, 0.0), 0.0);
    assert_eq!(g_mean(1.0, 1.0), 1.0);
    assert!((g_mean(0.81, 1.0) - 0.9).abs() < 1e-12);
}

#[test]
fn matcher_examples() {
    let r = match_detections(&[105, 150, 900], &[100, 800], 50).unwrap();
    assert_eq!((r.tp, r.fp, r.fn_), (1, 2, 1));
    assert_eq!(r.delays, vec![5]);
    assert!((r.precision - 1.0 / 3.0).abs() < 1e-12);
    assert!((r.recall - 0.5).abs() < 1e-12);
    assert!(match_detections(&[5, 1], &[1], 3).is_err());
    assert!(match_detections(&[1], &[1], -1).is_err());
    let empty = match_detections(&[], &[], 10).unwrap();
    assert_eq!((empty.precision, empty.recall), (0.0, 0.0));
}

#[test]
fn curve_is_monotone_in_range() {
    let dets = [12, 40, 75, 130, 260, 300];
    let truth = [10, 70, 250];
    let curve = precision_recall_curve(&dets, &truth, &[0, 5, 10, 50, 100]).unwrap();
    for w in curve.windows(2) {
        assert!(w[1].1.tp >= w[0].1.tp);
    }
    assert_eq!(curve.last().unwrap().1.tp, 3);
}

#[test]
fn pooling_adds_counts() {
    let a = match_detections(&[10, 20], &[9], 5).unwrap();
    let b = match_detections(&[], &[3, 30], 5).unwrap();
    let p = pool_reports(&[a, b]);
    assert_eq!((p.tp, p.fp, p.fn_), (1, 1, 2));
    assert!((p.precision - 0.5).abs() < 1e-12 && (p.recall - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn histogram_counts_values() {
    let h = histogram(&[0, 5, 5, 2]);
    assert_eq!(h.into_iter().collect::<Vec<_>>(), vec![(0, 1), (2, 1), (5, 2)]);
}

#[test]
fn cumulative_mode_matches_full_window() {
    let log: Vec<Prediction> = (0..50)
        .map(|t| Prediction {
            t,
            y: u8::from(t % 3 == 0),
            yhat: u8::from(t % 4 == 0),
        })
        .collect();
    let cum = prequential_series(&log, Prequential::Cumulative).unwrap();
    let win = prequential_series(&log, Prequential::Windowed(1000)).unwrap();
    assert_eq!(cum.oac, win.oac);
    assert_eq!(cum.kappa_plus, win.kappa_plus);
    assert!(prequential_series(&[], Prequential::Cumulative).is_err());
    assert!(prequential_series(&log, Prequential::Windowed(0)).is_err());
}

proptest! {
    #[test]
    fn matcher_equals_brute_force(
        dets in proptest::collection::vec(0usize..30, 0..7),
        truth in proptest::collection::vec(0usize..30, 0..6),
        range in 0usize..10,
    ) {
        let (dets, truth) = (sorted_unique(dets), sorted_unique(truth));
        let r = match_detections(&dets, &truth, range as i64).unwrap();
        let tp = brute_force_tp(&dets, &truth, range);
        prop_assert_eq!(r.tp, tp);
        prop_assert_eq!(r.fp + r.tp, dets.len());
        prop_assert_eq!(r.fn_ + r.tp, truth.len());
        prop_assert!(r.delays.iter().all(|&d| d <= range));
    }

    #[test]
    fn windowed_series_matches_recomputation(
        pairs in proptest::collection::vec((0u8..2, 0u8..2), 1..120),
        window in 1usize..40,
    ) {
        let log: Vec<Prediction> = pairs
            .iter()
            .enumerate()
            .map(|(t, &(y, yhat))| Prediction { t, y, yhat })
            .collect();
        let series = prequential_series(&log, Prequential::Windowed(window)).unwrap();
        for end in [log.len() / 2, log.len()] {
            if end == 0 {
                continue;
            }
            let (acc, f, g, kappa) = naive_metrics(&log[..end], window);
            let i = end - 1;
            prop_assert!((series.oac[i] - acc).abs() < 1e-12);
            prop_assert!((series.f_measure[i] - f).abs() < 1e-12);
            prop_assert!((series.g_mean[i] - g).abs() < 1e-12);
            match (series.kappa_plus[i], kappa) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9),
                (a, b) => prop_assert_eq!(a, b),
            }
        }
    }
}
