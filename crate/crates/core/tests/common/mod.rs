//! Independent oracles and shared fixtures for the integration tests.

#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use hlfr::boundtable::{default_n_grid, default_p_grid, BoundPair, BoundTable, DEFAULT_DRAWS};
use hlfr::streams::LabeledSample;
use nalgebra::{DMatrix, DVector};

pub const TABLE_SEED: u64 = 20_240_601;
pub const DEFAULT_SIGS: [f64; 2] = [0.0001, 0.01];

/// Default-grid table at eta 0.9 for the default warn and detect levels,
/// cached on disk between test binaries.
pub fn default_table() -> Arc<BoundTable> {
    static TABLE: OnceLock<Arc<BoundTable>> = OnceLock::new();
    TABLE
        .get_or_init(|| {
            let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR"))
                .join(format!("bounds-eta0.9-m{DEFAULT_DRAWS}-s{TABLE_SEED}.csv"));
            if let Ok(t) = BoundTable::load(&path) {
                return Arc::new(t);
            }
            let t = BoundTable::build(
                &default_p_grid(),
                &[0.9],
                &DEFAULT_SIGS,
                &default_n_grid(),
                DEFAULT_DRAWS,
                TABLE_SEED,
            )
            .expect("default table");
            // a concurrent writer may race; the content is identical either way
            let tmp = path.with_extension(format!("{}.tmp", std::process::id()));
            if t.save(&tmp).is_ok() {
                let _ = std::fs::rename(&tmp, &path);
            }
            Arc::new(t)
        })
        .clone()
}

/// Exact two-sided bounds by enumerating all `2^n` outcomes of
/// `(1 - eta) sum eta^(n-i) I_i + eta^n / 2`.
pub fn exact_bounds(p: f64, eta: f64, n: u32, sig: f64) -> BoundPair {
    let mut atoms: Vec<(f64, f64)> = (0u64..(1 << n))
        .map(|bits| {
            let mut r = 0.5;
            let mut prob = 1.0;
            for i in 0..n {
                let hit = (bits >> i) & 1 == 1;
                r = eta * r + if hit { 1.0 - eta } else { 0.0 };
                prob *= if hit { p } else { 1.0 - p };
            }
            (r, prob)
        })
        .collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let quantile = |level: f64| {
        let mut acc = 0.0;
        for &(r, prob) in &atoms {
            acc += prob;
            if acc >= level - 1e-12 {
                return r;
            }
        }
        atoms.last().unwrap().0
    };
    BoundPair {
        lower: quantile(sig / 2.0),
        upper: quantile(1.0 - sig / 2.0),
    }
}

/// Primal log-barrier interior-point solution of
/// `min 1/2 |w - a|^2 + C sum xi` s.t. `y_i (w.x_i + b) >= 1 - xi_i, xi >= 0`.
/// Returns `(w, b, objective)`.
pub fn qp_oracle(samples: &[LabeledSample], anchor: &[f64], c: f64) -> (Vec<f64>, f64, f64) {
    let n = samples.len();
    let d = anchor.len();
    let dim = d + 1 + n;
    let y: Vec<f64> = samples.iter().map(|s| if s.y == 1 { 1.0 } else { -1.0 }).collect();

    // strictly feasible start
    let mut z = DVector::zeros(dim);
    for k in 0..d {
        z[k] = anchor[k];
    }
    for i in 0..n {
        let margin = y[i] * samples[i].x.iter().zip(anchor).map(|(x, a)| x * a).sum::<f64>();
        z[d + 1 + i] = (1.0 - margin).max(0.0) + 1.0;
    }

    let objective = |z: &DVector<f64>| {
        let reg: f64 = (0..d).map(|k| (z[k] - anchor[k]).powi(2)).sum();
        0.5 * reg + c * (0..n).map(|i| z[d + 1 + i]).sum::<f64>()
    };
    // constraint rows: g_i(z) = y_i (w.x_i + b) - 1 + xi_i > 0 and xi_i > 0
    let slack = |z: &DVector<f64>, i: usize| {
        let score: f64 = (0..d).map(|k| z[k] * samples[i].x[k]).sum::<f64>() + z[d];
        y[i] * score - 1.0 + z[d + 1 + i]
    };
    let grad_g = |i: usize| {
        let mut g = DVector::zeros(dim);
        for k in 0..d {
            g[k] = y[i] * samples[i].x[k];
        }
        g[d] = y[i];
        g[d + 1 + i] = 1.0;
        g
    };
    let barrier = |z: &DVector<f64>, t: f64| -> Option<f64> {
        let mut v = t * objective(z);
        for i in 0..n {
            let g = slack(z, i);
            let xi = z[d + 1 + i];
            if g <= 0.0 || xi <= 0.0 {
                return None;
            }
            v -= g.ln() + xi.ln();
        }
        Some(v)
    };

    let mut t = 1.0;
    let m = 2.0 * n as f64;
    while m / t > 1e-10 {
        for _ in 0..200 {
            let mut grad = DVector::zeros(dim);
            let mut hess = DMatrix::zeros(dim, dim);
            for k in 0..d {
                grad[k] += t * (z[k] - anchor[k]);
                hess[(k, k)] += t;
            }
            for i in 0..n {
                grad[d + 1 + i] += t * c;
                let g = slack(&z, i);
                let gg = grad_g(i);
                grad -= &gg / g;
                hess += &gg * gg.transpose() / (g * g);
                let xi = z[d + 1 + i];
                grad[d + 1 + i] -= 1.0 / xi;
                hess[(d + 1 + i, d + 1 + i)] += 1.0 / (xi * xi);
            }
            // the bias direction can be flat when all constraints are loose
            for k in 0..dim {
                hess[(k, k)] += 1e-12;
            }
            let step = hess.clone().lu().solve(&(-&grad)).expect("newton system");
            let decrement = -grad.dot(&step);
            if decrement / 2.0 < 1e-12 {
                break;
            }
            let f0 = barrier(&z, t).unwrap();
            let mut s = 1.0;
            loop {
                let cand = &z + &step * s;
                if let Some(f) = barrier(&cand, t) {
                    if f <= f0 - 0.25 * s * decrement {
                        z = cand;
                        break;
                    }
                }
                s *= 0.5;
                if s < 1e-14 {
                    break;
                }
            }
        }
        t *= 8.0;
    }
    let w: Vec<f64> = (0..d).map(|k| z[k]).collect();
    let b = z[d];
    // report the objective with exact hinge slacks
    let hinge: f64 = (0..n)
        .map(|i| {
            let score: f64 = w.iter().zip(&samples[i].x).map(|(a, x)| a * x).sum::<f64>() + b;
            (1.0 - y[i] * score).max(0.0)
        })
        .sum();
    let reg: f64 = w.iter().zip(anchor).map(|(a, b)| (a - b).powi(2)).sum();
    (w, b, 0.5 * reg + c * hinge)
}

/// Maximum-cardinality matching of detections to drifts by exhaustive search:
/// each drift `g` may take at most one detection in `[g, g + range]`.
pub fn brute_force_tp(detections: &[usize], truth: &[usize], range: usize) -> usize {
    fn go(k: usize, truth: &[usize], dets: &[usize], used: &mut Vec<bool>, range: usize) -> usize {
        if k == truth.len() {
            return 0;
        }
        let mut best = go(k + 1, truth, dets, used, range);
        for j in 0..dets.len() {
            if !used[j] && dets[j] >= truth[k] && dets[j] - truth[k] <= range {
                used[j] = true;
                best = best.max(1 + go(k + 1, truth, dets, used, range));
                used[j] = false;
            }
        }
        best
    }
    let mut used = vec![false; detections.len()];
    go(0, truth, detections, &mut used, range)
}

/// All `k`-subsets of `0..n` as bit masks.
pub fn subsets(n: usize, k: usize) -> Vec<u64> {
    (0u64..(1 << n)).filter(|m| m.count_ones() as usize == k).collect()
}

pub fn sample(t: usize, x: Vec<f64>, y: u8) -> LabeledSample {
    LabeledSample::new(t, x, y).unwrap()
}

/// Two Gaussian-ish blobs in 2-D from a fixed linear congruential sequence,
/// deterministic and free of the crate's RNG helpers.
pub fn blobs(n: usize, seed: u64, shift: f64) -> Vec<LabeledSample> {
    let mut state = seed.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1_442_695_040_888_963_407);
    let mut uniform = move || {
        state = state
            .wrapping_mul(6_364_136_223_846_793_005)
            .wrapping_add(1_442_695_040_888_963_407);
        ((state >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    };
    let mut gauss = move || {
        let (u1, u2) = (uniform(), uniform());
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    (0..n)
        .map(|k| {
            let y = (k % 2) as u8;
            let centre = if y == 1 { shift } else { -shift };
            sample(k + 1, vec![centre + gauss(), 0.5 * centre + gauss()], y)
        })
        .collect()
}
