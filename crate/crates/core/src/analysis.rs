//! Error composition of the two-layer test and of detector ensembles,
//! Monte-Carlo power of the Layer-I statistic, and the stability bound of
//! the permutation test.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundtable::BoundTable;
use crate::lfr::SingleRateMonitor;
use crate::seed::{child_rng, derive_seed};
use crate::{Error, Result};

fn check_prob(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} = {v} outside [0, 1]")))
    }
}

/// Type-I error of the two-layer test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaComposition {
    /// `alpha1 * alpha2`.
    pub alpha: f64,
    /// `max(alpha1, alpha2)`.
    pub cap: f64,
}

/// A false alarm needs both layers to reject: `alpha = alpha1 alpha2`.
pub fn hht_alpha(alpha1: f64, alpha2: f64) -> Result<AlphaComposition> {
    check_prob("alpha1", alpha1)?;
    check_prob("alpha2", alpha2)?;
    Ok(AlphaComposition {
        alpha: alpha1 * alpha2,
        cap: alpha1.max(alpha2),
    })
}

/// Type-II error of the two-layer test with its bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaComposition {
    pub beta: f64,
    pub lower: f64,
    pub upper: f64,
}

/// A drift is missed when Layer-I misses it or Layer-II rejects it:
/// `beta = beta1 + (1 - beta1) beta2`, within
/// `[beta1, beta1 + max(1 - beta1, beta2)]`.
pub fn hht_beta(beta1: f64, beta2: f64) -> Result<BetaComposition> {
    check_prob("beta1", beta1)?;
    check_prob("beta2", beta2)?;
    Ok(BetaComposition {
        beta: beta1 + (1.0 - beta1) * beta2,
        lower: beta1,
        upper: beta1 + (1.0 - beta1).max(beta2),
    })
}

/// Any-of voting over `K` independent detectors:
/// `alpha = 1 - prod(1 - alpha_k)`, `beta = prod(beta_k)`.
pub fn ensemble_errors(alphas: &[f64], betas: &[f64]) -> Result<(f64, f64)> {
    if alphas.is_empty() {
        return Err(Error::EmptyInput("ensemble needs at least one detector"));
    }
    if alphas.len() != betas.len() {
        return Err(Error::invalid("alpha and beta lists differ in length"));
    }
    for (&a, &b) in alphas.iter().zip(betas) {
        check_prob("alpha", a)?;
        check_prob("beta", b)?;
    }
    let alpha = 1.0 - alphas.iter().map(|a| 1.0 - a).product::<f64>();
    let beta = betas.iter().product::<f64>();
    debug_assert!(alphas.iter().all(|&a| alpha >= a - 1e-15));
    Ok((alpha, beta))
}

/// Inputs of the permutation-test false-negative bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityBound {
    pub w: usize,
    pub gamma_w: f64,
    pub eta: f64,
    pub delta_cap: f64,
    pub eps_var: f64,
}

impl StabilityBound {
    /// Error stability from the template `gamma_W = c / W`.
    pub fn with_template(w: usize, c: f64, eta: f64) -> Self {
        Self {
            w,
            gamma_w: c / w.max(1) as f64,
            eta,
            delta_cap: 0.0,
            eps_var: 0.0,
        }
    }
}

/// `Theta = 6 W gamma_W + sqrt(4 ln(4 / eta) / W) + Delta + eps`.
pub fn theta_bound(b: &StabilityBound) -> Result<f64> {
    if b.w == 0 {
        return Err(Error::invalid("W must be at least 1"));
    }
    if !(b.eta > 0.0 && b.eta < 1.0) {
        return Err(Error::invalid("eta must lie in (0, 1)"));
    }
    if !(b.gamma_w >= 0.0) {
        return Err(Error::invalid("gamma_W must be non-negative"));
    }
    let w = b.w as f64;
    Ok(6.0 * w * b.gamma_w + (4.0 * (4.0 / b.eta).ln() / w).sqrt() + b.delta_cap + b.eps_var)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerConfig {
    /// Values used for both the pre-drift rate `p` and post-drift rate `q`.
    pub grid: Vec<f64>,
    /// Length of the stable segment.
    pub m: usize,
    /// Detection window after the change.
    pub k: usize,
    pub eta: f64,
    pub significance: f64,
    pub runs: usize,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            grid: (1..=9).map(|k| k as f64 / 10.0).collect(),
            m: 1000,
            k: 200,
            eta: 0.9,
            significance: 0.0001,
            runs: 100,
        }
    }
}

impl PowerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::EmptyInput("power grid is empty"));
        }
        if let Some(v) = self.grid.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::invalid(format!("grid value {v} outside (0, 1)")));
        }
        if self.m == 0 || self.k == 0 || self.runs == 0 {
            return Err(Error::invalid("m, k and runs must be at least 1"));
        }
        Ok(())
    }
}

/// Detection power on the `p x q` grid; `power[i][j]` is for `p = grid[i]`,
/// `q = grid[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerMatrix {
    pub grid: Vec<f64>,
    pub power: Vec<Vec<f64>>,
    pub runs: usize,
}

impl PowerMatrix {
    /// Binomial standard error of a cell.
    pub fn std_error(&self, i: usize, j: usize) -> f64 {
        let p = self.power[i][j];
        (p * (1.0 - p) / self.runs as f64).sqrt()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "p,q,power")?;
        for (i, p) in self.grid.iter().enumerate() {
            for (j, q) in self.grid.iter().enumerate() {
                writeln!(out, "{p},{q},{}", self.power[i][j])?;
            }
        }
        Ok(())
    }
}

/// One run: `m` Bernoulli(`p`) indicators, then `k` Bernoulli(`q`). Alarms in
/// the stable segment reset the monitor; returns whether an alarm occurs in
/// the last `k` steps.
pub fn power_run<R: Rng>(
    monitor: &mut SingleRateMonitor,
    p: f64,
    q: f64,
    m: usize,
    k: usize,
    rng: &mut R,
) -> Result<bool> {
    monitor.reset();
    for _ in 0..m {
        if monitor.update(rng.gen_bool(p))? {
            monitor.reset();
        }
    }
    for _ in 0..k {
        if monitor.update(rng.gen_bool(q))? {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Estimates the power of a single-rate Layer-I monitor. Cells run in
/// parallel with seeds derived from `(seed, cell index)`; run `r` of a cell
/// draws from `child_rng(cell_seed, r)`.
pub fn estimate_power(config: &PowerConfig, table: Arc<BoundTable>, seed: u64) -> Result<PowerMatrix> {
    config.validate()?;
    let g = config.grid.len();
    let probe = SingleRateMonitor::new(config.eta, config.significance, table)?;
    let cells: Vec<f64> = (0..g * g)
        .into_par_iter()
        .map(|cell| {
            let (p, q) = (config.grid[cell / g], config.grid[cell % g]);
            let cell_seed = derive_seed(seed, cell as u64);
            let mut monitor = probe.clone();
            let mut hits = 0usize;
            for r in 0..config.runs {
                let mut rng = child_rng(cell_seed, r as u64);
                hits += usize::from(power_run(&mut monitor, p, q, config.m, config.k, &mut rng)?);
            }
            Ok(hits as f64 / config.runs as f64)
        })
        .collect::<Result<_>>()?;
    Ok(PowerMatrix {
        grid: config.grid.clone(),
        power: cells.chunks(g).map(<[f64]>::to_vec).collect(),
        runs: config.runs,
    })
}
