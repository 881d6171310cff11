//! Scoring of detections against ground truth and prequential metrics.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::hht::Prediction;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Delay of each matched drift, in ground-truth order.
    pub delays: Vec<usize>,
    pub precision: f64,
    pub recall: f64,
}

impl MatchReport {
    pub fn mean_delay(&self) -> Option<f64> {
        if self.delays.is_empty() {
            None
        } else {
            Some(self.delays.iter().sum::<usize>() as f64 / self.delays.len() as f64)
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Greedy earliest-first matching: each drift `g`, in order, takes the first
/// unmatched detection in `[g, g + delay_range]`. Every other detection is a
/// false positive and every unmatched drift a false negative.
pub fn match_detections(detections: &[usize], ground_truth: &[usize], delay_range: i64) -> Result<MatchReport> {
    if delay_range < 0 {
        return Err(Error::invalid("delay range must be non-negative"));
    }
    for (name, list) in [("detections", detections), ("ground truth", ground_truth)] {
        if list.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid(format!("{name} must be sorted")));
        }
    }
    let range = delay_range as usize;
    let mut delays = Vec::new();
    let mut j = 0;
    for &g in ground_truth {
        while j < detections.len() && detections[j] < g {
            j += 1;
        }
        if j < detections.len() && detections[j] - g <= range {
            delays.push(detections[j] - g);
            j += 1;
        }
    }
    let tp = delays.len();
    let fp = detections.len() - tp;
    let fn_ = ground_truth.len() - tp;
    Ok(MatchReport {
        tp,
        fp,
        fn_,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        delays,
    })
}

/// One [`MatchReport`] per delay range.
pub fn precision_recall_curve(
    detections: &[usize],
    ground_truth: &[usize],
    delay_grid: &[i64],
) -> Result<Vec<(i64, MatchReport)>> {
    delay_grid
        .iter()
        .map(|&d| Ok((d, match_detections(detections, ground_truth, d)?)))
        .collect()
}

/// Pools several runs: counts add up, precision and recall are recomputed.
pub fn pool_reports(reports: &[MatchReport]) -> MatchReport {
    let tp = reports.iter().map(|r| r.tp).sum();
    let fp = reports.iter().map(|r| r.fp).sum();
    let fn_ = reports.iter().map(|r| r.fn_).sum();
    MatchReport {
        tp,
        fp,
        fn_,
        delays: reports.iter().flat_map(|r| r.delays.iter().copied()).collect(),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
    }
}

/// `(p0 - pe) / (1 - pe)`; undefined when `pe = 1`.
pub fn kappa_plus(p0: f64, pe: f64) -> Option<f64> {
    if pe >= 1.0 {
        None
    } else {
        Some((p0 - pe) / (1.0 - pe))
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn g_mean(acc_pos: f64, acc_neg: f64) -> f64 {
    (acc_pos * acc_neg).sqrt()
}

/// Binary confusion counts, with `no_change_hits` and `no_change_n` for the
/// classifier that repeats the previous label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
    pub no_change_hits: u64,
    pub no_change_n: u64,
}

impl Confusion {
    fn add(&mut self, p: &Prediction, prev_y: Option<u8>, sign: i64) {
        let slot = match (p.y, p.yhat) {
            (1, 1) => &mut self.tp,
            (0, 0) => &mut self.tn,
            (0, 1) => &mut self.fp,
            _ => &mut self.fn_,
        };
        *slot = (*slot as i64 + sign) as u64;
        if let Some(prev) = prev_y {
            self.no_change_n = (self.no_change_n as i64 + sign) as u64;
            if prev == p.y {
                self.no_change_hits = (self.no_change_hits as i64 + sign) as u64;
            }
        }
    }

    pub fn n(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio((self.tp + self.tn) as usize, self.n() as usize)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp as usize, (self.tp + self.fp) as usize)
    }

    /// Accuracy on the positive class.
    pub fn recall(&self) -> f64 {
        ratio(self.tp as usize, (self.tp + self.fn_) as usize)
    }

    /// Accuracy on the negative class.
    pub fn specificity(&self) -> f64 {
        ratio(self.tn as usize, (self.tn + self.fp) as usize)
    }

    pub fn no_change_accuracy(&self) -> Option<f64> {
        (self.no_change_n > 0).then(|| self.no_change_hits as f64 / self.no_change_n as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "window")]
pub enum Prequential {
    /// Everything since the start of the log.
    Cumulative,
    /// The most recent `n` predictions.
    Windowed(usize),
}

impl Default for Prequential {
    fn default() -> Self {
        Prequential::Windowed(500)
    }
}

/// Per-time metric series. Classes absent from the window contribute an
/// accuracy of 0 to the G-mean; `kappa_plus` is `None` where the no-change
/// classifier is perfect or undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct PrequentialSeries {
    pub t: Vec<usize>,
    pub oac: Vec<f64>,
    pub f_measure: Vec<f64>,
    pub g_mean: Vec<f64>,
    pub kappa_plus: Vec<Option<f64>>,
    pub mode: Prequential,
}

pub fn prequential_series(log: &[Prediction], mode: Prequential) -> Result<PrequentialSeries> {
    if log.is_empty() {
        return Err(Error::EmptyInput("prequential metrics need a non-empty log"));
    }
    if mode == Prequential::Windowed(0) {
        return Err(Error::invalid("prequential window must be positive"));
    }
    let n = log.len();
    let mut out = PrequentialSeries {
        t: Vec::with_capacity(n),
        oac: Vec::with_capacity(n),
        f_measure: Vec::with_capacity(n),
        g_mean: Vec::with_capacity(n),
        kappa_plus: Vec::with_capacity(n),
        mode,
    };
    let prev = |i: usize| (i > 0).then(|| log[i - 1].y);
    let mut c = Confusion::default();
    for (i, p) in log.iter().enumerate() {
        c.add(p, prev(i), 1);
        if let Prequential::Windowed(w) = mode {
            if i >= w {
                c.add(&log[i - w], prev(i - w), -1);
            }
        }
        let p0 = c.accuracy();
        out.t.push(p.t);
        out.oac.push(p0);
        out.f_measure.push(f_measure(c.precision(), c.recall()));
        out.g_mean.push(g_mean(c.recall(), c.specificity()));
        out.kappa_plus.push(c.no_change_accuracy().and_then(|pe| kappa_plus(p0, pe)));
    }
    Ok(out)
}

impl PrequentialSeries {
    pub const HEADER: &'static str = "t,oac,f_measure,g_mean,kappa_plus";

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", Self::HEADER)?;
        for i in 0..self.t.len() {
            let kappa = self.kappa_plus[i].map(|k| k.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{kappa}",
                self.t[i], self.oac[i], self.f_measure[i], self.g_mean[i]
            )?;
        }
        Ok(())
    }
}

/// Counts per integer value (bin width 1).
pub fn histogram(values: &[usize]) -> BTreeMap<usize, usize> {
    let mut bins = BTreeMap::new();
    for &v in values {
        *bins.entry(v).or_insert(0) += 1;
    }
    bins
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(t: usize, y: u8, yhat: u8) -> Prediction {
        Prediction { t, y, yhat }
    }

    #[test]
    fn exact_hits() {
        let r = match_detections(&[100, 200], &[100, 200], 0).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (2, 0, 0));
        assert_eq!((r.precision, r.recall), (1.0, 1.0));
        assert_eq!(r.delays, vec![0, 0]);
    }

    #[test]
    fn extra_detection_in_range_is_false_positive() {
        let r = match_detections(&[105, 110], &[100], 50).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (1, 1, 0));
        assert_eq!(r.delays, vec![5]);
    }

    #[test]
    fn empty_inputs_and_errors() {
        let r = match_detections(&[], &[10, 20], 100).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_, r.precision, r.recall), (0, 0, 2, 0.0, 0.0));
        assert!(match_detections(&[1], &[1], -1).is_err());
        assert!(match_detections(&[5, 1], &[1], 3).is_err());
    }

    #[test]
    fn recall_steps_at_delay() {
        let curve = precision_recall_curve(&[110], &[100], &[0, 5, 9, 10, 20]).unwrap();
        let recalls: Vec<f64> = curve.iter().map(|(_, r)| r.recall).collect();
        assert_eq!(recalls, vec![0.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn kappa_and_friends() {
        assert!((kappa_plus(0.9, 0.8).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(kappa_plus(0.7, 1.0), None);
        assert_eq!(f_measure(1.0, 1.0), 1.0);
        assert_eq!(g_mean(1.0, 1.0), 1.0);
        assert_eq!(f_measure(0.0, 0.0), 0.0);
    }

    #[test]
    fn perfect_alternating_predictor() {
        let log: Vec<_> = (1..=10).map(|t| pred(t, (t % 2) as u8, (t % 2) as u8)).collect();
        let s = prequential_series(&log, Prequential::Cumulative).unwrap();
        let last = log.len() - 1;
        assert_eq!(s.oac[last], 1.0);
        assert_eq!(s.kappa_plus[last], Some(1.0));
        assert_eq!(s.f_measure[last], 1.0);
        assert_eq!(s.g_mean[last], 1.0);
        assert_eq!(s.kappa_plus[0], None);
    }

    #[test]
    fn windowed_matches_recount() {
        let log: Vec<_> = (1..=50)
            .map(|t| pred(t, ((t * 7) % 3 == 0) as u8, ((t * 5) % 4 == 0) as u8))
            .collect();
        let s = prequential_series(&log, Prequential::Windowed(8)).unwrap();
        for i in 0..log.len() {
            let lo = i.saturating_sub(7);
            let hits = log[lo..=i].iter().filter(|p| p.y == p.yhat).count();
            assert!((s.oac[i] - hits as f64 / (i + 1 - lo) as f64).abs() < 1e-12);
        }
        assert!(prequential_series(&[], Prequential::Cumulative).is_err());
    }

    #[test]
    fn histogram_bins() {
        let h = histogram(&[3, 1, 3, 3]);
        assert_eq!(h.get(&3), Some(&3));
        assert_eq!(h.get(&1), Some(&1));
        assert_eq!(h.len(), 2);
    }
}
