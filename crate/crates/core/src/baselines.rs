//! Reference detectors: DDM, EDDM, STEPD and DDM-OCI.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::monitor::{check_labels, Alarm, DriftMonitor};
use crate::{Error, Result};

/// Tracks the start of the current warning period.
#[derive(Debug, Clone, Copy, Default)]
struct WarnClock(Option<usize>);

impl WarnClock {
    fn update(&mut self, t: usize, alarm: Alarm) -> Alarm {
        match alarm {
            Alarm::Warning => {
                self.0.get_or_insert(t);
            }
            Alarm::Stable => self.0 = None,
            Alarm::Drift => {}
        }
        alarm
    }
}

// ---------------------------------------------------------------- DDM

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdmConfig {
    pub warn_level: f64,
    pub detect_level: f64,
    pub min_samples: usize,
}

impl Default for DdmConfig {
    fn default() -> Self {
        Self {
            warn_level: 2.0,
            detect_level: 3.0,
            min_samples: 30,
        }
    }
}

/// Drift detection method: error rate `p` with `s = sqrt(p(1-p)/n)` against
/// the running minimum of `p + s`.
#[derive(Debug, Clone)]
pub struct Ddm {
    config: DdmConfig,
    n: u64,
    errors: u64,
    p_min: f64,
    s_min: f64,
    clock: WarnClock,
}

impl Ddm {
    pub fn new(config: DdmConfig) -> Result<Self> {
        if !(0.0 < config.warn_level && config.warn_level < config.detect_level) {
            return Err(Error::invalid("DDM needs 0 < warn_level < detect_level"));
        }
        Ok(Self {
            config,
            n: 0,
            errors: 0,
            p_min: f64::INFINITY,
            s_min: f64::INFINITY,
            clock: WarnClock::default(),
        })
    }

    /// Running minimum `p_min + s_min`; infinite before the warm-up ends.
    pub fn min_level(&self) -> f64 {
        self.p_min + self.s_min
    }

    /// Feeds one correctness indicator.
    pub fn update(&mut self, correct: bool) -> Alarm {
        self.n += 1;
        self.errors += u64::from(!correct);
        let n = self.n as f64;
        let p = self.errors as f64 / n;
        let s = (p * (1.0 - p) / n).sqrt();
        if self.n < self.config.min_samples as u64 {
            return Alarm::Stable;
        }
        if p + s < self.p_min + self.s_min {
            self.p_min = p;
            self.s_min = s;
        }
        if p + s > self.p_min + self.config.detect_level * self.s_min {
            self.restart();
            Alarm::Drift
        } else if p + s > self.p_min + self.config.warn_level * self.s_min {
            Alarm::Warning
        } else {
            Alarm::Stable
        }
    }

    fn restart(&mut self) {
        self.n = 0;
        self.errors = 0;
        self.p_min = f64::INFINITY;
        self.s_min = f64::INFINITY;
        self.clock = WarnClock::default();
    }
}

impl DriftMonitor for Ddm {
    fn observe(&mut self, t: usize, y: u8, yhat: u8) -> Result<Alarm> {
        check_labels(y, yhat)?;
        let alarm = self.update(y == yhat);
        Ok(self.clock.update(t, alarm))
    }
    fn reset(&mut self) {
        self.restart();
    }
    fn warn_time(&self) -> Option<usize> {
        self.clock.0
    }
    fn name(&self) -> &'static str {
        "DDM"
    }
}

// ---------------------------------------------------------------- EDDM

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EddmConfig {
    pub warn_level: f64,
    pub detect_level: f64,
    pub min_errors: usize,
}

impl Default for EddmConfig {
    fn default() -> Self {
        Self {
            warn_level: 0.95,
            detect_level: 0.90,
            min_errors: 30,
        }
    }
}

/// Early drift detection method: mean and deviation of the gap between
/// consecutive errors against their running maximum.
#[derive(Debug, Clone)]
pub struct Eddm {
    config: EddmConfig,
    n: u64,
    last_error: u64,
    errors: u64,
    mean: f64,
    m2: f64,
    max_level: f64,
    last_ratio: Option<f64>,
    clock: WarnClock,
}

impl Eddm {
    pub fn new(config: EddmConfig) -> Result<Self> {
        if !(0.0 < config.detect_level && config.detect_level < config.warn_level && config.warn_level <= 1.0)
        {
            return Err(Error::invalid("EDDM needs 0 < detect_level < warn_level <= 1"));
        }
        Ok(Self {
            config,
            n: 0,
            last_error: 0,
            errors: 0,
            mean: 0.0,
            m2: 0.0,
            max_level: 0.0,
            last_ratio: None,
            clock: WarnClock::default(),
        })
    }

    /// `(p' + 2 s') / max(p' + 2 s')` at the latest evaluated error.
    pub fn last_ratio(&self) -> Option<f64> {
        self.last_ratio
    }

    pub fn update(&mut self, correct: bool) -> Alarm {
        self.n += 1;
        if correct {
            return self.current();
        }
        let gap = (self.n - self.last_error) as f64;
        self.last_error = self.n;
        self.errors += 1;
        // Welford update of the gap mean and variance
        let k = self.errors as f64;
        let delta = gap - self.mean;
        self.mean += delta / k;
        self.m2 += delta * (gap - self.mean);
        let level = self.mean + 2.0 * (self.m2 / k).sqrt();
        if level > self.max_level {
            self.max_level = level;
        }
        if self.errors < self.config.min_errors as u64 {
            return Alarm::Stable;
        }
        let ratio = level / self.max_level;
        self.last_ratio = Some(ratio);
        if ratio < self.config.detect_level {
            self.restart();
            Alarm::Drift
        } else if ratio < self.config.warn_level {
            Alarm::Warning
        } else {
            Alarm::Stable
        }
    }

    /// State between errors: the last verdict stands.
    fn current(&self) -> Alarm {
        match self.last_ratio {
            Some(r) if r < self.config.warn_level => Alarm::Warning,
            _ => Alarm::Stable,
        }
    }

    fn restart(&mut self) {
        *self = Self::new(self.config).expect("config validated at construction");
    }
}

impl DriftMonitor for Eddm {
    fn observe(&mut self, t: usize, y: u8, yhat: u8) -> Result<Alarm> {
        check_labels(y, yhat)?;
        let alarm = self.update(y == yhat);
        Ok(self.clock.update(t, alarm))
    }
    fn reset(&mut self) {
        self.restart();
    }
    fn warn_time(&self) -> Option<usize> {
        self.clock.0
    }
    fn name(&self) -> &'static str {
        "EDDM"
    }
}

// ---------------------------------------------------------------- STEPD

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepdConfig {
    pub window: usize,
    pub warn_level: f64,
    pub detect_level: f64,
}

impl Default for StepdConfig {
    fn default() -> Self {
        Self {
            window: 30,
            warn_level: 0.05,
            detect_level: 0.01,
        }
    }
}

/// Signed two-proportion statistic with continuity correction comparing the
/// historical accuracy `hits_old / n_old` to the recent `hits_recent /
/// n_recent`. Positive when the recent accuracy is lower; the magnitude is
/// clamped at zero once the correction exceeds the difference.
pub fn stepd_z(hits_old: f64, n_old: f64, hits_recent: f64, n_recent: f64) -> f64 {
    let diff = hits_old / n_old - hits_recent / n_recent;
    let p = (hits_old + hits_recent) / (n_old + n_recent);
    let inv = 1.0 / n_old + 1.0 / n_recent;
    let sd = (p * (1.0 - p) * inv).sqrt();
    if sd == 0.0 {
        return 0.0;
    }
    let magnitude = (diff.abs() - 0.5 * inv).max(0.0) / sd;
    magnitude.copysign(diff)
}

/// Statistical test of equal proportions between a recent window and the
/// older history.
#[derive(Debug, Clone)]
pub struct Stepd {
    config: StepdConfig,
    normal: Normal,
    recent: VecDeque<bool>,
    recent_hits: u64,
    old_n: u64,
    old_hits: u64,
    last_p: Option<f64>,
    clock: WarnClock,
}

impl Stepd {
    pub fn new(config: StepdConfig) -> Result<Self> {
        if config.window == 0 {
            return Err(Error::invalid("STEPD window must be positive"));
        }
        if !(0.0 < config.detect_level && config.detect_level < config.warn_level && config.warn_level < 1.0) {
            return Err(Error::invalid("STEPD needs 0 < detect_level < warn_level < 1"));
        }
        Ok(Self {
            config,
            normal: Normal::standard(),
            recent: VecDeque::with_capacity(config.window + 1),
            recent_hits: 0,
            old_n: 0,
            old_hits: 0,
            last_p: None,
            clock: WarnClock::default(),
        })
    }

    /// One-sided p-value of the latest test.
    pub fn last_p_value(&self) -> Option<f64> {
        self.last_p
    }

    pub fn update(&mut self, correct: bool) -> Alarm {
        self.recent.push_back(correct);
        self.recent_hits += u64::from(correct);
        if self.recent.len() > self.config.window {
            let old = self.recent.pop_front().unwrap_or(false);
            self.recent_hits -= u64::from(old);
            self.old_n += 1;
            self.old_hits += u64::from(old);
        }
        // test once the history is at least as long as the recent window
        if self.old_n < self.config.window as u64 {
            return Alarm::Stable;
        }
        let z = stepd_z(
            self.old_hits as f64,
            self.old_n as f64,
            self.recent_hits as f64,
            self.config.window as f64,
        );
        let p = 1.0 - self.normal.cdf(z);
        self.last_p = Some(p);
        if p < self.config.detect_level {
            self.restart();
            Alarm::Drift
        } else if p < self.config.warn_level {
            Alarm::Warning
        } else {
            Alarm::Stable
        }
    }

    fn restart(&mut self) {
        self.recent.clear();
        self.recent_hits = 0;
        self.old_n = 0;
        self.old_hits = 0;
        self.last_p = None;
        self.clock = WarnClock::default();
    }
}

impl DriftMonitor for Stepd {
    fn observe(&mut self, t: usize, y: u8, yhat: u8) -> Result<Alarm> {
        check_labels(y, yhat)?;
        let alarm = self.update(y == yhat);
        Ok(self.clock.update(t, alarm))
    }
    fn reset(&mut self) {
        self.restart();
    }
    fn warn_time(&self) -> Option<usize> {
        self.clock.0
    }
    fn name(&self) -> &'static str {
        "STEPD"
    }
}

// ---------------------------------------------------------------- DDM-OCI

/// The multipliers have no defaults; they must be chosen per data set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdmOciConfig {
    pub warn_lambda: f64,
    pub detect_lambda: f64,
    #[serde(default = "default_oci_eta")]
    pub eta: f64,
    /// Minority-class updates before the test is evaluated.
    #[serde(default = "default_oci_min")]
    pub min_samples: usize,
    #[serde(default = "default_minority")]
    pub minority: u8,
}

fn default_oci_eta() -> f64 {
    0.9
}
fn default_oci_min() -> usize {
    30
}
fn default_minority() -> u8 {
    1
}

impl DdmOciConfig {
    pub fn new(warn_lambda: f64, detect_lambda: f64) -> Self {
        Self {
            warn_lambda,
            detect_lambda,
            eta: default_oci_eta(),
            min_samples: default_oci_min(),
            minority: default_minority(),
        }
    }
}

/// DDM mirrored onto the decayed minority-class recall `R`, with
/// `s = sqrt(R (1 - R) (1 - eta) / (1 + eta))`. `(R_max, s_max)` are recorded
/// where `R + s` peaks; alarms fire when `R + s < R_max - lambda * s_max`.
#[derive(Debug, Clone)]
pub struct DdmOci {
    config: DdmOciConfig,
    r: f64,
    updates: u64,
    r_max: f64,
    s_max: f64,
    clock: WarnClock,
}

impl DdmOci {
    pub fn new(config: DdmOciConfig) -> Result<Self> {
        if !(config.eta > 0.0 && config.eta < 1.0) {
            return Err(Error::invalid("DDM-OCI eta must lie in (0, 1)"));
        }
        if !(config.warn_lambda < config.detect_lambda) {
            return Err(Error::invalid(
                "DDM-OCI needs warn_lambda < detect_lambda (the detection test is stricter)",
            ));
        }
        if config.minority > 1 {
            return Err(Error::InvalidLabel(config.minority as i64));
        }
        Ok(Self {
            config,
            r: 0.5,
            updates: 0,
            r_max: f64::NEG_INFINITY,
            s_max: 0.0,
            clock: WarnClock::default(),
        })
    }

    pub fn recall(&self) -> f64 {
        self.r
    }

    fn spread(&self) -> f64 {
        let e = self.config.eta;
        (self.r * (1.0 - self.r) * (1.0 - e) / (1.0 + e)).sqrt()
    }

    pub fn update(&mut self, y: u8, yhat: u8) -> Alarm {
        if y != self.config.minority {
            return self.current();
        }
        let e = self.config.eta;
        self.r = e * self.r + (1.0 - e) * if y == yhat { 1.0 } else { 0.0 };
        self.updates += 1;
        if self.updates < self.config.min_samples as u64 {
            return Alarm::Stable;
        }
        let s = self.spread();
        if self.r + s > self.r_max + self.s_max {
            self.r_max = self.r;
            self.s_max = s;
        }
        if self.r + s < self.r_max - self.config.detect_lambda * self.s_max {
            self.restart();
            Alarm::Drift
        } else {
            self.current()
        }
    }

    fn current(&self) -> Alarm {
        if self.updates >= self.config.min_samples as u64
            && self.r + self.spread() < self.r_max - self.config.warn_lambda * self.s_max
        {
            Alarm::Warning
        } else {
            Alarm::Stable
        }
    }

    fn restart(&mut self) {
        self.r = 0.5;
        self.updates = 0;
        self.r_max = f64::NEG_INFINITY;
        self.s_max = 0.0;
        self.clock = WarnClock::default();
    }
}

impl DriftMonitor for DdmOci {
    fn observe(&mut self, t: usize, y: u8, yhat: u8) -> Result<Alarm> {
        check_labels(y, yhat)?;
        let alarm = self.update(y, yhat);
        Ok(self.clock.update(t, alarm))
    }
    fn reset(&mut self) {
        self.restart();
    }
    fn warn_time(&self) -> Option<usize> {
        self.clock.0
    }
    fn name(&self) -> &'static str {
        "DDM-OCI"
    }
}

/// Selection of a baseline detector and its settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "detector", rename_all = "snake_case")]
pub enum BaselineConfig {
    Ddm(#[serde(default)] DdmConfig),
    Eddm(#[serde(default)] EddmConfig),
    Stepd(#[serde(default)] StepdConfig),
    DdmOci(DdmOciConfig),
}

impl BaselineConfig {
    pub fn build(&self) -> Result<Box<dyn DriftMonitor>> {
        Ok(match *self {
            BaselineConfig::Ddm(c) => Box::new(Ddm::new(c)?),
            BaselineConfig::Eddm(c) => Box::new(Eddm::new(c)?),
            BaselineConfig::Stepd(c) => Box::new(Stepd::new(c)?),
            BaselineConfig::DdmOci(c) => Box::new(DdmOci::new(c)?),
        })
    }
}
