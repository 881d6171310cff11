//! Layer-I test: Linear Four Rates.
//!
//! Each of the four confusion-matrix rates keeps a decayed estimate
//! `R <- eta R + (1 - eta) 1{y = yhat}` updated only on samples that condition
//! it (tpr on `y = 1`, tnr on `y = 0`, ppv on `yhat = 1`, npv on `yhat = 0`).
//! Its empirical counterpart `P` and effective count `N` come from a confusion
//! matrix started at all ones, and the decayed rate is compared to warning
//! and detection bounds looked up at `(P, eta, sig, N)`.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::boundtable::{BoundTable, R0};
use crate::monitor::{check_labels, Alarm, DriftMonitor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateKind {
    Tpr,
    Tnr,
    Ppv,
    Npv,
}

impl RateKind {
    pub const ALL: [RateKind; 4] = [RateKind::Tpr, RateKind::Tnr, RateKind::Ppv, RateKind::Npv];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            RateKind::Tpr => "tpr",
            RateKind::Tnr => "tnr",
            RateKind::Ppv => "ppv",
            RateKind::Npv => "npv",
        }
    }
}

/// Whether the sample `(y, yhat)` conditions rate `kind`.
pub fn rate_affected(kind: RateKind, y: u8, yhat: u8) -> bool {
    match kind {
        RateKind::Tpr => y == 1,
        RateKind::Tnr => y == 0,
        RateKind::Ppv => yhat == 1,
        RateKind::Npv => yhat == 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LfrConfig {
    /// Decay factor shared by the four rates.
    pub eta: f64,
    pub warn_sig: f64,
    pub detect_sig: f64,
}

impl Default for LfrConfig {
    fn default() -> Self {
        Self {
            eta: 0.9,
            warn_sig: 0.01,
            detect_sig: 0.0001,
        }
    }
}

impl LfrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::invalid(format!("eta = {} outside (0, 1)", self.eta)));
        }
        if !(0.0 < self.detect_sig && self.detect_sig < self.warn_sig && self.warn_sig < 1.0) {
            return Err(Error::invalid(
                "significance levels must satisfy 0 < detect_sig < warn_sig < 1",
            ));
        }
        Ok(())
    }
}

/// Running state of the four-rate monitor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfrState {
    pub r: [f64; 4],
    pub p_hat: [f64; 4],
    /// Confusion counts indexed `[yhat][y]`.
    pub conf: [[u64; 2]; 2],
    pub warn_time: Option<usize>,
    /// Index of the last processed sample.
    pub t: usize,
}

impl Default for LfrState {
    fn default() -> Self {
        Self {
            r: [R0; 4],
            p_hat: [0.5; 4],
            conf: [[1; 2]; 2],
            warn_time: None,
            t: 0,
        }
    }
}

impl LfrState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Effective count `N` and empirical rate `P` for `kind`.
    pub fn counts(&self, kind: RateKind) -> (u64, f64) {
        let c = &self.conf;
        let (hit, n) = match kind {
            RateKind::Tpr => (c[1][1], c[0][1] + c[1][1]),
            RateKind::Tnr => (c[0][0], c[0][0] + c[1][0]),
            RateKind::Ppv => (c[1][1], c[1][0] + c[1][1]),
            RateKind::Npv => (c[0][0], c[0][0] + c[0][1]),
        };
        (n, hit as f64 / n as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    None,
    WarningStarted,
    WarningCleared,
    PotentialDrift,
}

impl SignalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SignalKind::None => "none",
            SignalKind::WarningStarted => "warning_started",
            SignalKind::WarningCleared => "warning_cleared",
            SignalKind::PotentialDrift => "potential_drift",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerOneSignal {
    pub kind: SignalKind,
    pub t_pot: Option<usize>,
    pub warn_time: Option<usize>,
}

/// Table slices resolved once per configuration.
#[derive(Debug, Clone, Copy)]
pub struct Slices {
    eta: usize,
    warn: usize,
    detect: usize,
}

impl Slices {
    pub fn resolve(table: &BoundTable, config: &LfrConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            eta: table.eta_index(config.eta)?,
            warn: table.sig_index(config.warn_sig)?,
            detect: table.sig_index(config.detect_sig)?,
        })
    }
}

/// Processes sample `t`. On a potential drift the state is left as is; the
/// caller decides when to [`lfr_reset`].
pub fn lfr_step(
    state: &mut LfrState,
    t: usize,
    y: u8,
    yhat: u8,
    config: &LfrConfig,
    table: &BoundTable,
) -> Result<LayerOneSignal> {
    let slices = Slices::resolve(table, config)?;
    lfr_step_resolved(state, t, y, yhat, config.eta, slices, table)
}

pub(crate) fn lfr_step_resolved(
    state: &mut LfrState,
    t: usize,
    y: u8,
    yhat: u8,
    eta: f64,
    slices: Slices,
    table: &BoundTable,
) -> Result<LayerOneSignal> {
    check_labels(y, yhat)?;
    state.t = t;
    state.conf[yhat as usize][y as usize] += 1;
    let correct = if y == yhat { 1.0 } else { 0.0 };

    let mut warn_hit = false;
    let mut detect_hit = false;
    for kind in RateKind::ALL {
        let k = kind.index();
        if rate_affected(kind, y, yhat) {
            state.r[k] = eta * state.r[k] + (1.0 - eta) * correct;
        }
        let (n, p) = state.counts(kind);
        state.p_hat[k] = p;
        let warn = table.lookup_at(slices.eta, slices.warn, p, n as f64)?.bounds;
        let detect = table.lookup_at(slices.eta, slices.detect, p, n as f64)?.bounds;
        warn_hit |= warn.excludes(state.r[k]);
        detect_hit |= detect.excludes(state.r[k]);
    }

    let mut kind = SignalKind::None;
    if warn_hit && state.warn_time.is_none() {
        state.warn_time = Some(t);
        kind = SignalKind::WarningStarted;
    } else if !warn_hit && state.warn_time.is_some() {
        state.warn_time = None;
        kind = SignalKind::WarningCleared;
    }
    if detect_hit {
        return Ok(LayerOneSignal {
            kind: SignalKind::PotentialDrift,
            t_pot: Some(t),
            warn_time: state.warn_time,
        });
    }
    Ok(LayerOneSignal {
        kind,
        t_pot: None,
        warn_time: state.warn_time,
    })
}

/// Back to the initial rates and counts; the time index is kept.
pub fn lfr_reset(state: &mut LfrState) {
    *state = LfrState {
        t: state.t,
        ..LfrState::default()
    };
}

pub const TRACE_HEADER: &str =
    "t,R_tpr,R_tnr,R_ppv,R_npv,Phat_tpr,Phat_tnr,Phat_ppv,Phat_npv,signal";

/// One row of the per-step trace CSV.
pub fn trace_row(state: &LfrState, signal: &LayerOneSignal) -> String {
    let mut s = state.t.to_string();
    for v in state.r.iter().chain(&state.p_hat) {
        let _ = write!(s, ",{v}");
    }
    let _ = write!(s, ",{}", signal.kind.as_str());
    s
}

/// LFR behind the [`DriftMonitor`] interface; resets itself on detection.
#[derive(Debug, Clone)]
pub struct Lfr {
    config: LfrConfig,
    table: Arc<BoundTable>,
    slices: Slices,
    state: LfrState,
    last: Option<LayerOneSignal>,
}

impl Lfr {
    pub fn new(config: LfrConfig, table: Arc<BoundTable>) -> Result<Self> {
        let slices = Slices::resolve(&table, &config)?;
        Ok(Self {
            config,
            table,
            slices,
            state: LfrState::new(),
            last: None,
        })
    }

    pub fn config(&self) -> &LfrConfig {
        &self.config
    }

    pub fn state(&self) -> &LfrState {
        &self.state
    }

    /// Signal of the most recent step.
    pub fn last_signal(&self) -> Option<LayerOneSignal> {
        self.last
    }

    /// Raw step without the automatic reset.
    pub fn step(&mut self, t: usize, y: u8, yhat: u8) -> Result<LayerOneSignal> {
        let signal = lfr_step_resolved(
            &mut self.state,
            t,
            y,
            yhat,
            self.config.eta,
            self.slices,
            &self.table,
        )?;
        self.last = Some(signal);
        Ok(signal)
    }
}

impl DriftMonitor for Lfr {
    fn observe(&mut self, t: usize, y: u8, yhat: u8) -> Result<Alarm> {
        let signal = self.step(t, y, yhat)?;
        if signal.kind == SignalKind::PotentialDrift {
            lfr_reset(&mut self.state);
            return Ok(Alarm::Drift);
        }
        Ok(if self.state.warn_time.is_some() {
            Alarm::Warning
        } else {
            Alarm::Stable
        })
    }

    fn reset(&mut self) {
        lfr_reset(&mut self.state);
        self.last = None;
    }

    fn warn_time(&self) -> Option<usize> {
        self.state.warn_time
    }

    fn name(&self) -> &'static str {
        "LFR"
    }
}

/// One decayed rate monitored against the detection bounds, fed directly
/// with correctness indicators. Pseudo counts mirror a single LFR rate: one
/// hit and one miss before the first observation.
#[derive(Debug, Clone)]
pub struct SingleRateMonitor {
    eta: f64,
    eta_idx: usize,
    sig_idx: usize,
    table: Arc<BoundTable>,
    r: f64,
    hits: u64,
    total: u64,
}

impl SingleRateMonitor {
    pub fn new(eta: f64, significance: f64, table: Arc<BoundTable>) -> Result<Self> {
        Ok(Self {
            eta,
            eta_idx: table.eta_index(eta)?,
            sig_idx: table.sig_index(significance)?,
            table,
            r: R0,
            hits: 1,
            total: 2,
        })
    }

    pub fn rate(&self) -> f64 {
        self.r
    }

    /// Updates with one indicator; returns whether the rate left its bounds.
    pub fn update(&mut self, hit: bool) -> Result<bool> {
        self.r = self.eta * self.r + if hit { 1.0 - self.eta } else { 0.0 };
        self.total += 1;
        self.hits += u64::from(hit);
        let p = self.hits as f64 / self.total as f64;
        let b = self
            .table
            .lookup_at(self.eta_idx, self.sig_idx, p, self.total as f64)?
            .bounds;
        Ok(b.excludes(self.r))
    }

    pub fn reset(&mut self) {
        self.r = R0;
        self.hits = 1;
        self.total = 2;
    }
}
