//! Monte-Carlo quantile tables for the decayed rate statistic under a stable
//! concept.
//!
//! After `N` updates from the initial value `R0 = 0.5`, the decayed rate is
//!
//! ```text
//! R = (1 - eta) * sum_{i=1..N} eta^(N-i) I_i + eta^N R0,   I_i ~ Bernoulli(p) iid
//! ```
//!
//! The table stores its two-sided empirical quantiles at `sig/2` and
//! `1 - sig/2` over a grid of `(p, eta, sig, N)`. Quantiles use the
//! inverse-CDF convention: the smallest sampled value whose empirical CDF
//! reaches the level.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::seed::{derive_seed, rng_from};
use crate::{Error, Result};

/// Initial decayed rate after a reset.
pub const R0: f64 = 0.5;

/// Default number of Monte-Carlo draws per key.
pub const DEFAULT_DRAWS: usize = 100_000;

/// Minimum accepted number of draws.
pub const MIN_DRAWS: usize = 1000;

/// Terms older than this weight contribute below double-precision resolution
/// of the statistic and are replaced by their expectation.
const TRUNCATION_WEIGHT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundKey {
    pub p_star: f64,
    pub eta: f64,
    pub significance: f64,
    pub n_star: u64,
}

impl BoundKey {
    pub fn new(p_star: f64, eta: f64, significance: f64, n_star: u64) -> Self {
        Self {
            p_star,
            eta,
            significance,
            n_star,
        }
    }

    fn validate(&self) -> Result<()> {
        check_open_unit("p_star", self.p_star)?;
        check_open_unit("eta", self.eta)?;
        check_open_unit("significance", self.significance)?;
        if self.n_star == 0 {
            return Err(Error::invalid("n_star must be at least 1"));
        }
        Ok(())
    }
}

fn check_open_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} = {v} outside (0, 1)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundPair {
    pub lower: f64,
    pub upper: f64,
}

impl BoundPair {
    /// Whether `r` lies outside `[lower, upper]`, ignoring rounding-level gaps.
    #[inline]
    pub fn excludes(&self, r: f64) -> bool {
        const SLACK: f64 = 1e-9;
        r < self.lower - SLACK || r > self.upper + SLACK
    }

    pub fn contains(&self, other: &BoundPair) -> bool {
        self.lower <= other.lower && other.upper <= self.upper
    }
}

/// Number of most recent updates simulated explicitly for decay `eta`.
fn truncation_len(eta: f64) -> u64 {
    (TRUNCATION_WEIGHT.ln() / eta.ln()).ceil().max(1.0) as u64
}

/// Draws `m` realisations of the statistic at every `n` in `n_nodes` from a
/// shared trajectory per draw; returns one sorted sample vector per node.
fn simulate_column(p: f64, eta: f64, n_nodes: &[u64], m: usize, seed: u64) -> Vec<Vec<f64>> {
    let trunc = truncation_len(eta);
    let effective: Vec<u64> = n_nodes.iter().map(|&n| n.min(trunc)).collect();
    // contribution of the state before the simulated window
    let offsets: Vec<f64> = n_nodes
        .iter()
        .zip(&effective)
        .map(|(&n, &e)| {
            let start = if n <= trunc {
                R0
            } else {
                p + eta.powf((n - trunc) as f64) * (R0 - p)
            };
            eta.powf(e as f64) * start
        })
        .collect();
    let steps = effective.iter().copied().max().unwrap_or(0);

    // checkpoints sorted by step, each mapped back to its node
    let mut order: Vec<usize> = (0..n_nodes.len()).collect();
    order.sort_by_key(|&k| effective[k]);

    let threshold = (p * 4_294_967_296.0) as u64;
    let mut rng = rng_from(seed);
    let mut columns = vec![Vec::with_capacity(m); n_nodes.len()];
    for _ in 0..m {
        let mut s = 0.0;
        let mut next = 0;
        for step in 1..=steps {
            let hit = (rng.gen::<u32>() as u64) < threshold;
            s = eta * s + if hit { 1.0 - eta } else { 0.0 };
            while next < order.len() && effective[order[next]] == step {
                let k = order[next];
                columns[k].push(s + offsets[k]);
                next += 1;
            }
        }
    }
    for c in &mut columns {
        c.sort_by(f64::total_cmp);
    }
    columns
}

/// Inverse-CDF quantile of a sorted sample.
fn quantile(sorted: &[f64], level: f64) -> f64 {
    let m = sorted.len();
    let rank = ((level * m as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(m) - 1]
}

fn bounds_from(sorted: &[f64], significance: f64) -> BoundPair {
    let a = significance / 2.0;
    BoundPair {
        lower: quantile(sorted, a).clamp(0.0, 1.0),
        upper: quantile(sorted, 1.0 - a).clamp(0.0, 1.0),
    }
}

/// Seed of the `(p, eta)` column. Derived from the values rather than grid
/// positions so that a key gets the same draws in every table.
fn column_seed(seed: u64, p: f64, eta: f64) -> u64 {
    derive_seed(derive_seed(seed, p.to_bits()), eta.to_bits())
}

/// Two-sided Monte-Carlo bounds for one key.
pub fn simulate_bounds(key: &BoundKey, m_draws: usize, seed: u64) -> Result<BoundPair> {
    key.validate()?;
    if m_draws < MIN_DRAWS {
        return Err(Error::invalid(format!("m_draws must be at least {MIN_DRAWS}")));
    }
    let column = simulate_column(
        key.p_star,
        key.eta,
        &[key.n_star],
        m_draws,
        column_seed(seed, key.p_star, key.eta),
    );
    Ok(bounds_from(&column[0], key.significance))
}

/// `0.01, 0.02, ..., 0.99`.
pub fn default_p_grid() -> Vec<f64> {
    (1..=99).map(|k| k as f64 / 100.0).collect()
}

/// Sixteen log-spaced counts from 1 to 10^4.
pub fn default_n_grid() -> Vec<u64> {
    let mut grid: Vec<u64> = (0..16)
        .map(|k| 10f64.powf(4.0 * k as f64 / 15.0).round() as u64)
        .collect();
    grid.dedup();
    grid
}

/// Dense table of bounds over `p x eta x sig x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundTable {
    p_grid: Vec<f64>,
    eta_list: Vec<f64>,
    sig_list: Vec<f64>,
    n_grid: Vec<u64>,
    entries: Vec<BoundPair>,
    m_draws: usize,
    seed: u64,
}

/// Result of a table lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lookup {
    pub bounds: BoundPair,
    /// The key fell outside the `p` or `N` range and was clamped to the edge.
    pub clamped: bool,
}

fn check_sorted<T: PartialOrd + Copy>(name: &str, grid: &[T]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid(format!("{name} grid is empty")));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!("{name} grid must be strictly increasing")));
    }
    Ok(())
}

impl BoundTable {
    /// Builds the table. Columns `(p, eta)` run in parallel with seeds derived
    /// from `(seed, p, eta)`; all significance levels and counts of a column
    /// share its draws, so bounds nest across significance levels.
    pub fn build(
        p_grid: &[f64],
        eta_list: &[f64],
        sig_list: &[f64],
        n_grid: &[u64],
        m_draws: usize,
        seed: u64,
    ) -> Result<Self> {
        check_sorted("p", p_grid)?;
        check_sorted("eta", eta_list)?;
        check_sorted("significance", sig_list)?;
        check_sorted("n", n_grid)?;
        for &p in p_grid {
            check_open_unit("p", p)?;
        }
        for &e in eta_list {
            check_open_unit("eta", e)?;
        }
        for &s in sig_list {
            check_open_unit("significance", s)?;
        }
        if n_grid[0] == 0 {
            return Err(Error::invalid("n grid must start at 1 or more"));
        }
        if m_draws < MIN_DRAWS {
            return Err(Error::invalid(format!("m_draws must be at least {MIN_DRAWS}")));
        }

        let columns: Vec<(f64, f64)> = p_grid
            .iter()
            .flat_map(|&p| eta_list.iter().map(move |&e| (p, e)))
            .collect();
        let blocks: Vec<Vec<BoundPair>> = columns
            .par_iter()
            .map(|&(p, eta)| {
                let samples = simulate_column(p, eta, n_grid, m_draws, column_seed(seed, p, eta));
                sig_list
                    .iter()
                    .flat_map(|&sig| samples.iter().map(move |s| bounds_from(s, sig)))
                    .collect()
            })
            .collect();

        Ok(Self {
            p_grid: p_grid.to_vec(),
            eta_list: eta_list.to_vec(),
            sig_list: sig_list.to_vec(),
            n_grid: n_grid.to_vec(),
            entries: blocks.into_iter().flatten().collect(),
            m_draws,
            seed,
        })
    }

    /// Default grid for the given decays and significance levels.
    pub fn build_default(eta_list: &[f64], sig_list: &[f64], seed: u64) -> Result<Self> {
        Self::build(
            &default_p_grid(),
            eta_list,
            sig_list,
            &default_n_grid(),
            DEFAULT_DRAWS,
            seed,
        )
    }

    pub fn p_grid(&self) -> &[f64] {
        &self.p_grid
    }
    pub fn eta_list(&self) -> &[f64] {
        &self.eta_list
    }
    pub fn sig_list(&self) -> &[f64] {
        &self.sig_list
    }
    pub fn n_grid(&self) -> &[u64] {
        &self.n_grid
    }
    pub fn m_draws(&self) -> usize {
        self.m_draws
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn len(&self) -> usize {
        self.entries.len()
    }
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn index(&self, p: usize, e: usize, s: usize, n: usize) -> usize {
        ((p * self.eta_list.len() + e) * self.sig_list.len() + s) * self.n_grid.len() + n
    }

    /// Stored entry at grid indices `(p, eta, sig, n)`.
    pub fn entry(&self, p: usize, e: usize, s: usize, n: usize) -> BoundPair {
        self.entries[self.index(p, e, s, n)]
    }

    /// Rows as `(p, eta, sig, n, bounds)` in lexicographic key order.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, f64, u64, BoundPair)> + '_ {
        let (ne, ns, nn) = (self.eta_list.len(), self.sig_list.len(), self.n_grid.len());
        self.entries.iter().enumerate().map(move |(k, b)| {
            let n = k % nn;
            let s = (k / nn) % ns;
            let e = (k / (nn * ns)) % ne;
            let p = k / (nn * ns * ne);
            (self.p_grid[p], self.eta_list[e], self.sig_list[s], self.n_grid[n], *b)
        })
    }

    fn slice_index(list: &[f64], value: f64, what: &'static str) -> Result<usize> {
        list.iter()
            .position(|&v| (v - value).abs() <= 1e-12 * value.abs().max(1.0))
            .ok_or(Error::MissingSlice { what, value })
    }

    /// Bilinear interpolation over `(p, n)` at the exact `(eta, sig)` slice.
    pub fn lookup(&self, key: &BoundKey) -> Result<Lookup> {
        let e = Self::slice_index(&self.eta_list, key.eta, "eta")?;
        let s = Self::slice_index(&self.sig_list, key.significance, "significance")?;
        self.lookup_at(e, s, key.p_star, key.n_star as f64)
    }

    /// Lookup with pre-resolved slice indices; for per-step use.
    pub fn lookup_at(&self, eta_idx: usize, sig_idx: usize, p: f64, n: f64) -> Result<Lookup> {
        let (pi, pw, pc) = bracket(&self.p_grid, p);
        let (ni, nw, nc) = bracket_u64(&self.n_grid, n);
        let at = |a: usize, b: usize| self.entry(a, eta_idx, sig_idx, b);
        let p_hi = (pi + 1).min(self.p_grid.len() - 1);
        let n_hi = (ni + 1).min(self.n_grid.len() - 1);
        let (b00, b01, b10, b11) = (at(pi, ni), at(pi, n_hi), at(p_hi, ni), at(p_hi, n_hi));
        let mix = |f: fn(&BoundPair) -> f64| {
            let low_p = f(&b00) * (1.0 - nw) + f(&b01) * nw;
            let high_p = f(&b10) * (1.0 - nw) + f(&b11) * nw;
            (low_p * (1.0 - pw) + high_p * pw).clamp(0.0, 1.0)
        };
        Ok(Lookup {
            bounds: BoundPair {
                lower: mix(|b| b.lower),
                upper: mix(|b| b.upper),
            },
            clamped: pc || nc,
        })
    }

    pub fn eta_index(&self, eta: f64) -> Result<usize> {
        Self::slice_index(&self.eta_list, eta, "eta")
    }

    pub fn sig_index(&self, sig: f64) -> Result<usize> {
        Self::slice_index(&self.sig_list, sig, "significance")
    }

    /// Writes the table as CSV with a leading `#` comment line.
    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = BufWriter::new(writer);
        writeln!(out, "# m_draws={} seed={}", self.m_draws, self.seed)?;
        writeln!(out, "p,eta,sig,n,lower,upper")?;
        for (p, e, s, n, b) in self.rows() {
            writeln!(out, "{p},{e},{s},{n},{},{}", b.lower, b.upper)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let fmt = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();

        let meta = lines.next().ok_or_else(|| fmt("empty file".into()))??;
        let meta = meta
            .strip_prefix('#')
            .ok_or_else(|| fmt("missing `# m_draws=... seed=...` line".into()))?;
        let (mut m_draws, mut seed) = (None, None);
        for token in meta.split_whitespace() {
            match token.split_once('=') {
                Some(("m_draws", v)) => m_draws = v.parse().ok(),
                Some(("seed", v)) => seed = v.parse().ok(),
                _ => {}
            }
        }
        let (m_draws, seed) = match (m_draws, seed) {
            (Some(m), Some(s)) => (m, s),
            _ => return Err(fmt("comment line must record m_draws and seed".into())),
        };
        let header = lines.next().ok_or_else(|| fmt("missing header".into()))??;
        if header.trim() != "p,eta,sig,n,lower,upper" {
            return Err(fmt(format!("unexpected header `{header}`")));
        }

        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = k + 1;
            let bad = |m: &str| Error::Row {
                path: path.to_path_buf(),
                row,
                message: m.to_string(),
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad("expected 6 columns"));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("not a number"));
            let n = f[3].trim().parse::<u64>().map_err(|_| bad("n is not an integer"))?;
            rows.push((num(f[0])?, num(f[1])?, num(f[2])?, n, num(f[4])?, num(f[5])?));
        }

        let uniq_f = |sel: fn(&(f64, f64, f64, u64, f64, f64)) -> f64| {
            let mut v: Vec<f64> = rows.iter().map(sel).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let p_grid = uniq_f(|r| r.0);
        let eta_list = uniq_f(|r| r.1);
        let sig_list = uniq_f(|r| r.2);
        let mut n_grid: Vec<u64> = rows.iter().map(|r| r.3).collect();
        n_grid.sort_unstable();
        n_grid.dedup();

        let expected = p_grid.len() * eta_list.len() * sig_list.len() * n_grid.len();
        if rows.is_empty() || rows.len() != expected {
            return Err(fmt(format!(
                "table is not dense: {} rows for a {}x{}x{}x{} grid",
                rows.len(),
                p_grid.len(),
                eta_list.len(),
                sig_list.len(),
                n_grid.len()
            )));
        }
        let mut table = Self {
            p_grid,
            eta_list,
            sig_list,
            n_grid,
            entries: vec![BoundPair { lower: 0.0, upper: 0.0 }; expected],
            m_draws,
            seed,
        };
        let mut filled = vec![false; expected];
        for (p, e, s, n, lower, upper) in rows {
            let pi = table.p_grid.iter().position(|&v| v == p).unwrap();
            let ei = table.eta_list.iter().position(|&v| v == e).unwrap();
            let si = table.sig_list.iter().position(|&v| v == s).unwrap();
            let ni = table.n_grid.iter().position(|&v| v == n).unwrap();
            let idx = table.index(pi, ei, si, ni);
            if filled[idx] {
                return Err(fmt(format!("duplicate key ({p}, {e}, {s}, {n})")));
            }
            if lower > upper {
                return Err(fmt(format!("lower > upper at ({p}, {e}, {s}, {n})")));
            }
            filled[idx] = true;
            table.entries[idx] = BoundPair { lower, upper };
        }
        Ok(table)
    }
}

/// Lower bracketing index, interpolation weight, and whether `x` was clamped.
fn bracket(grid: &[f64], x: f64) -> (usize, f64, bool) {
    let last = grid.len() - 1;
    if x <= grid[0] {
        return (0, 0.0, x < grid[0]);
    }
    if x >= grid[last] {
        return (last, 0.0, x > grid[last]);
    }
    let hi = grid.partition_point(|&g| g <= x);
    let lo = hi - 1;
    (lo, (x - grid[lo]) / (grid[hi] - grid[lo]), false)
}

fn bracket_u64(grid: &[u64], x: f64) -> (usize, f64, bool) {
    let last = grid.len() - 1;
    if x <= grid[0] as f64 {
        return (0, 0.0, x < grid[0] as f64);
    }
    if x >= grid[last] as f64 {
        return (last, 0.0, x > grid[last] as f64);
    }
    let hi = grid.partition_point(|&g| (g as f64) <= x);
    let lo = hi - 1;
    (lo, (x - grid[lo] as f64) / (grid[hi] - grid[lo]) as f64, false)
}
