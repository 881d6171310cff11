//! Linear soft-margin SVM and the anchored (adaptive) SVM.
//!
//! Both problems are solved through one dual: with `v = w - w_anchor`,
//!
//! ```text
//! min_{v,b,xi}  1/2 |v|^2 + C sum xi_i
//! s.t.          y_i (v.x_i + b) >= 1 - y_i w_anchor.x_i - xi_i,  xi_i >= 0
//! ```
//!
//! which is a standard SVM whose per-sample margin targets are offset by the
//! anchor's score. The plain SVM is the case `w_anchor = 0`. The bias `b` is
//! free and unregularised. Labels are `{0, 1}` at the API and `{-1, +1}`
//! inside the solver.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::streams::LabeledSample;
use crate::{Error, Result};

/// Linear decision function `w.x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub c_reg: f64,
    /// Set when the model is the constant fallback for single-class data.
    #[serde(default)]
    pub degenerate: bool,
}

impl SvmModel {
    pub fn new(w: Vec<f64>, b: f64, c_reg: f64) -> Self {
        Self {
            w,
            b,
            c_reg,
            degenerate: false,
        }
    }

    /// Constant classifier that always predicts `label`.
    pub fn constant(dim: usize, label: u8, c_reg: f64) -> Self {
        Self {
            w: vec![0.0; dim],
            b: if label == 1 { 1.0 } else { -1.0 },
            c_reg,
            degenerate: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    #[inline]
    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }

    /// Predicts `1` iff `w.x + b >= 0`; the boundary goes to the positive class.
    pub fn predict(&self, x: &[f64]) -> Result<u8> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    #[inline]
    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> u8 {
        u8::from(self.score(x) >= 0.0)
    }

    /// Plain-text record: `d`, `b`, then the `d` weights, one value per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.dim());
        let _ = writeln!(s, "{}", self.b);
        for w in &self.w {
            let _ = writeln!(s, "{w}");
        }
        s
    }
}

impl FromStr for SvmModel {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let bad = |m: &str| Error::invalid(format!("model record: {m}"));
        let d: usize = lines
            .next()
            .ok_or_else(|| bad("missing dimension"))?
            .parse()
            .map_err(|_| bad("dimension is not an integer"))?;
        let b: f64 = lines
            .next()
            .ok_or_else(|| bad("missing bias"))?
            .parse()
            .map_err(|_| bad("bias is not a number"))?;
        let w = lines
            .map(|l| l.parse::<f64>().map_err(|_| bad("weight is not a number")))
            .collect::<Result<Vec<_>>>()?;
        if w.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: w.len(),
            });
        }
        Ok(SvmModel::new(w, b, 1.0))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fraction of `samples` the model misclassifies.
pub fn zero_one_loss(model: &SvmModel, samples: &[LabeledSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("zero-one loss needs at least one sample"));
    }
    let mut wrong = 0usize;
    for s in samples {
        if model.predict(&s.x)? != s.y {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / samples.len() as f64)
}

/// `1/2 |w - anchor|^2 + C sum hinge`. Pass an all-zero anchor for the plain SVM.
pub fn anchored_objective(
    w: &[f64],
    b: f64,
    anchor: &[f64],
    c_reg: f64,
    samples: &[LabeledSample],
) -> f64 {
    let reg: f64 = w.iter().zip(anchor).map(|(a, b)| (a - b) * (a - b)).sum();
    let hinge: f64 = samples
        .iter()
        .map(|s| {
            let y = if s.y == 1 { 1.0 } else { -1.0 };
            (1.0 - y * (dot(w, &s.x) + b)).max(0.0)
        })
        .sum();
    0.5 * reg + c_reg * hinge
}

pub fn svm_objective(model: &SvmModel, c_reg: f64, samples: &[LabeledSample]) -> f64 {
    let zero = vec![0.0; model.dim()];
    anchored_objective(&model.w, model.b, &zero, c_reg, samples)
}

/// A training algorithm usable inside the permutation test.
pub trait Learner: Sync {
    fn fit(&self, samples: &[&LabeledSample]) -> Result<SvmModel>;
}

/// Anchored-SVM training problem.
#[derive(Debug, Clone)]
pub struct AsvmProblem {
    pub primary: Vec<LabeledSample>,
    pub anchor: SvmModel,
    pub c_reg: f64,
}

/// Dual SMO trainer for the linear soft-margin SVM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmTrainer {
    /// Slack penalty `C`.
    pub c_reg: f64,
    /// Maximum number of SMO pair updates.
    pub max_iter: usize,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
}

impl Default for SvmTrainer {
    fn default() -> Self {
        Self {
            c_reg: 1.0,
            max_iter: 100_000,
            tol: 1e-3,
        }
    }
}

impl SvmTrainer {
    pub fn new(c_reg: f64) -> Self {
        Self {
            c_reg,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.c_reg >= 0.0 && self.c_reg.is_finite()) {
            return Err(Error::invalid("C must be finite and non-negative"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("solver tolerance must be positive"));
        }
        Ok(())
    }

    pub fn train(&self, samples: &[LabeledSample]) -> Result<SvmModel> {
        let refs: Vec<&LabeledSample> = samples.iter().collect();
        self.fit(&refs)
    }

    pub fn train_adaptive(&self, samples: &[LabeledSample], anchor: &SvmModel) -> Result<SvmModel> {
        let refs: Vec<&LabeledSample> = samples.iter().collect();
        self.fit_anchored(&refs, Some(anchor))
    }

    fn fit_anchored(&self, samples: &[&LabeledSample], anchor: Option<&SvmModel>) -> Result<SvmModel> {
        self.validate()?;
        let first = samples
            .first()
            .ok_or(Error::EmptyInput("SVM training needs at least one sample"))?;
        let d = first.dim();
        if let Some(bad) = samples.iter().find(|s| s.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.dim(),
            });
        }
        if let Some(a) = anchor {
            if a.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: a.dim(),
                });
            }
        }
        if let Some(s) = samples.iter().find(|s| s.y > 1) {
            return Err(Error::InvalidLabel(s.y as i64));
        }
        let positives = samples.iter().filter(|s| s.y == 1).count();
        if positives == 0 || positives == samples.len() {
            return Ok(SvmModel::constant(d, first.y, self.c_reg));
        }
        if self.c_reg == 0.0 {
            // every slack is free, so the regulariser alone pins w to the anchor
            return Ok(match anchor {
                Some(a) => SvmModel::new(a.w.clone(), a.b, 0.0),
                None => SvmModel::new(vec![0.0; d], 0.0, 0.0),
            });
        }

        let anchor_w = anchor.map(|a| a.w.as_slice());
        let (v, b) = Smo::new(samples, anchor_w, self.c_reg).solve(self.max_iter, self.tol);
        let w = match anchor_w {
            Some(a) => a.iter().zip(&v).map(|(a, v)| a + v).collect(),
            None => v,
        };
        Ok(SvmModel::new(w, b, self.c_reg))
    }
}

impl Learner for SvmTrainer {
    fn fit(&self, samples: &[&LabeledSample]) -> Result<SvmModel> {
        self.fit_anchored(samples, None)
    }
}

/// Soft-margin linear SVM with parameter `C`.
pub fn train_svm(samples: &[LabeledSample], c_reg: f64, max_iter: usize) -> Result<SvmModel> {
    SvmTrainer {
        c_reg,
        max_iter,
        ..SvmTrainer::default()
    }
    .train(samples)
}

/// Anchored SVM: `min 1/2 |w - w_anchor|^2 + C sum xi`.
pub fn train_adaptive_svm(problem: &AsvmProblem, max_iter: usize) -> Result<SvmModel> {
    if problem.primary.is_empty() {
        return Err(Error::EmptyInput("anchored SVM needs at least one primary sample"));
    }
    SvmTrainer {
        c_reg: problem.c_reg,
        max_iter,
        ..SvmTrainer::default()
    }
    .train_adaptive(&problem.primary, &problem.anchor)
}

const TAU: f64 = 1e-12;

/// Sequential minimal optimisation with second-order working-set selection,
/// on `min 1/2 a'Qa + p'a, 0 <= a <= C, y'a = 0`.
struct Smo<'a> {
    samples: &'a [&'a LabeledSample],
    y: Vec<f64>,
    /// Gram matrix, row-major.
    gram: Vec<f64>,
    p: Vec<f64>,
    c: f64,
}

impl<'a> Smo<'a> {
    fn new(samples: &'a [&'a LabeledSample], anchor: Option<&[f64]>, c: f64) -> Self {
        let n = samples.len();
        let y: Vec<f64> = samples.iter().map(|s| if s.y == 1 { 1.0 } else { -1.0 }).collect();
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let k = dot(&samples[i].x, &samples[j].x);
                gram[i * n + j] = k;
                gram[j * n + i] = k;
            }
        }
        let p = samples
            .iter()
            .zip(&y)
            .map(|(s, yi)| {
                let offset = anchor.map_or(0.0, |a| yi * dot(a, &s.x));
                offset - 1.0
            })
            .collect();
        Self {
            samples,
            y,
            gram,
            p,
            c,
        }
    }

    fn q(&self, i: usize, j: usize) -> f64 {
        self.y[i] * self.y[j] * self.gram[i * self.y.len() + j]
    }

    fn solve(&self, max_iter: usize, tol: f64) -> (Vec<f64>, f64) {
        let n = self.y.len();
        let c = self.c;
        let mut alpha = vec![0.0; n];
        let mut grad = self.p.clone();

        for _ in 0..max_iter {
            let Some((i, j)) = self.select_pair(&alpha, &grad, tol) else {
                break;
            };
            let (old_i, old_j) = (alpha[i], alpha[j]);
            let qii = self.gram[i * n + i];
            let qjj = self.gram[j * n + j];
            let qij = self.q(i, j);

            if self.y[i] != self.y[j] {
                let quad = (qii + qjj + 2.0 * qij).max(TAU);
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = alpha[i] - alpha[j];
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > 0.0 {
                    if alpha[j] < 0.0 {
                        alpha[j] = 0.0;
                        alpha[i] = diff;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if diff > 0.0 {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = c - diff;
                    }
                } else if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = c + diff;
                }
            } else {
                let quad = (qii + qjj - 2.0 * qij).max(TAU);
                let delta = (grad[i] - grad[j]) / quad;
                let sum = alpha[i] + alpha[j];
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > c {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = sum - c;
                    }
                } else if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if sum > c {
                    if alpha[j] > c {
                        alpha[j] = c;
                        alpha[i] = sum - c;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }

            let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
            for k in 0..n {
                grad[k] += self.q(i, k) * di + self.q(j, k) * dj;
            }
        }

        let b = -self.rho(&alpha, &grad);
        let d = self.samples[0].dim();
        let mut v = vec![0.0; d];
        for (k, s) in self.samples.iter().enumerate() {
            if alpha[k] > 0.0 {
                let coef = alpha[k] * self.y[k];
                for (vj, xj) in v.iter_mut().zip(&s.x) {
                    *vj += coef * xj;
                }
            }
        }
        (v, b)
    }

    fn in_up(&self, a: f64, y: f64) -> bool {
        (y > 0.0 && a < self.c) || (y < 0.0 && a > 0.0)
    }

    fn in_low(&self, a: f64, y: f64) -> bool {
        (y > 0.0 && a > 0.0) || (y < 0.0 && a < self.c)
    }

    fn select_pair(&self, alpha: &[f64], grad: &[f64], tol: f64) -> Option<(usize, usize)> {
        let n = self.y.len();
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            if self.in_up(alpha[t], self.y[t]) {
                let v = -self.y[t] * grad[t];
                if v >= gmax {
                    gmax = v;
                    i_sel = Some(t);
                }
            }
        }
        let i = i_sel?;
        let qii = self.gram[i * n + i];

        let mut gmax2 = f64::NEG_INFINITY;
        let mut obj_min = f64::INFINITY;
        let mut j_sel = None;
        for t in 0..n {
            if !self.in_low(alpha[t], self.y[t]) {
                continue;
            }
            let yg = self.y[t] * grad[t];
            if yg >= gmax2 {
                gmax2 = yg;
            }
            let b = gmax + yg;
            if b > 0.0 {
                let kit = self.gram[i * n + t];
                let a = (qii + self.gram[t * n + t] - 2.0 * kit).max(TAU);
                let obj = -(b * b) / a;
                if obj <= obj_min {
                    obj_min = obj;
                    j_sel = Some(t);
                }
            }
        }
        if gmax + gmax2 < tol {
            return None;
        }
        j_sel.map(|j| (i, j))
    }

    fn rho(&self, alpha: &[f64], grad: &[f64]) -> f64 {
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut free, mut sum_free) = (0usize, 0.0);
        for t in 0..self.y.len() {
            let yg = self.y[t] * grad[t];
            if alpha[t] >= self.c {
                if self.y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if alpha[t] <= 0.0 {
                if self.y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                sum_free += yg;
            }
        }
        if free > 0 {
            sum_free / free as f64
        } else {
            (ub + lb) / 2.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: usize, x: &[f64], y: u8) -> LabeledSample {
        LabeledSample::new(t, x.to_vec(), y).unwrap()
    }

    #[test]
    fn predict_rule_and_tie_break() {
        let m = SvmModel::new(vec![1.0, 0.0], 0.0, 1.0);
        assert_eq!(m.predict(&[2.0, 5.0]).unwrap(), 1);
        assert_eq!(m.predict(&[-2.0, 5.0]).unwrap(), 0);
        assert_eq!(m.predict(&[0.0, 5.0]).unwrap(), 1);
        assert!(matches!(
            m.predict(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn separable_pair_has_zero_hinge() {
        let data = vec![sample(1, &[1.0, 1.0], 1), sample(2, &[-1.0, -1.0], 0)];
        let m = train_svm(&data, 1.0, 10_000).unwrap();
        assert_eq!(zero_one_loss(&m, &data).unwrap(), 0.0);
        for s in &data {
            let y = if s.y == 1 { 1.0 } else { -1.0 };
            assert!(y * m.score(&s.x) >= 1.0 - 1e-6);
        }
        // the max-margin solution for this pair is w = (0.5, 0.5), b = 0
        assert!((m.w[0] - 0.5).abs() < 1e-6 && (m.w[1] - 0.5).abs() < 1e-6);
        assert!(m.b.abs() < 1e-6);
    }

    #[test]
    fn single_class_gives_flagged_constant() {
        let data = vec![sample(1, &[1.0], 1), sample(2, &[3.0], 1)];
        let m = train_svm(&data, 1.0, 100).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.predict(&[-100.0]).unwrap(), 1);
        let data0 = vec![sample(1, &[1.0], 0)];
        let m0 = train_svm(&data0, 1.0, 100).unwrap();
        assert!(m0.degenerate);
        assert_eq!(m0.predict(&[100.0]).unwrap(), 0);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(train_svm(&[], 1.0, 10), Err(Error::EmptyInput(_))));
        let m = SvmModel::new(vec![1.0], 0.0, 1.0);
        assert!(zero_one_loss(&m, &[]).is_err());
    }

    #[test]
    fn c_zero_returns_anchor() {
        let data = vec![sample(1, &[1.0, 2.0], 1), sample(2, &[-1.0, 0.5], 0)];
        let anchor = SvmModel::new(vec![0.3, -0.7], 0.2, 1.0);
        let problem = AsvmProblem {
            primary: data,
            anchor: anchor.clone(),
            c_reg: 0.0,
        };
        let m = train_adaptive_svm(&problem, 1000).unwrap();
        assert_eq!(m.w, anchor.w);
    }

    #[test]
    fn constant_one_model_loss() {
        let m = SvmModel::constant(1, 1, 1.0);
        let data: Vec<_> = (0..10).map(|k| sample(k + 1, &[k as f64], u8::from(k < 3))).collect();
        assert!((zero_one_loss(&m, &data).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn inverted_model_loss_complements() {
        let m = SvmModel::new(vec![1.0, -0.5], 0.25, 1.0);
        let inv = SvmModel::new(vec![-1.0, 0.5], -0.25, 1.0);
        let data: Vec<_> = (0..50)
            .map(|k| {
                let x = [(k as f64 * 0.37).sin() * 3.0, (k as f64 * 0.91).cos() * 2.0];
                sample(k + 1, &x, (k % 3 == 0) as u8)
            })
            .collect();
        let boundary = data.iter().filter(|s| m.score(&s.x) == 0.0).count() as f64 / 50.0;
        let direct = |model: &SvmModel| {
            data.iter().filter(|s| model.predict(&s.x).unwrap() != s.y).count() as f64 / 50.0
        };
        let l = zero_one_loss(&m, &data).unwrap();
        let li = zero_one_loss(&inv, &data).unwrap();
        assert_eq!(l, direct(&m));
        assert!((li - (1.0 - l - boundary)).abs() < 1e-12);
    }

    #[test]
    fn model_text_round_trip() {
        let m = SvmModel::new(vec![0.1, -2.5e-7, 3.0], -1.125, 1.0);
        let text = m.to_text();
        assert!(text.starts_with("3\n-1.125\n"));
        let back: SvmModel = text.parse().unwrap();
        assert_eq!(back.w, m.w);
        assert_eq!(back.b, m.b);
        assert!("2\n0\n1\n".parse::<SvmModel>().is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let data: Vec<_> = (0..40)
            .map(|k| {
                let x = [(k as f64 * 1.3).sin(), (k as f64 * 0.7).cos()];
                sample(k + 1, &x, u8::from(x[0] + 0.3 * x[1] > 0.1))
            })
            .collect();
        let trainer = SvmTrainer::default();
        assert_eq!(trainer.train(&data).unwrap(), trainer.train(&data).unwrap());
    }
}
