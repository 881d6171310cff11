//! Hierarchical hypothesis testing around a deployed linear SVM.
//!
//! [`Hht`] runs LFR online. When it raises a potential drift at `t_pot`, the
//! `W` most recent samples (ending at `t_pot`) are frozen as the segment
//! before the drift, Layer-I is suspended while the next `W` samples are
//! collected, and the permutation test decides. A confirmed drift replaces
//! the classifier, trained on the collected segment either from scratch or
//! anchored at the current weights; a rejected one is discarded. In both
//! cases Layer-I restarts from its initial state.
//!
//! [`MonitorRunner`] deploys any single-layer [`DriftMonitor`] the same way,
//! relearning right after each detection.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{DdmConfig, DdmOciConfig, EddmConfig, StepdConfig, BaselineConfig};
use crate::boundtable::BoundTable;
use crate::classifier::{SvmModel, SvmTrainer};
use crate::lfr::{lfr_reset, lfr_step_resolved, Lfr, LfrConfig, LfrState, SignalKind, Slices};
use crate::monitor::{Alarm, DriftMonitor};
use crate::permtest::{permutation_test, Decision, PermutationConfig};
use crate::seed::derive_seed;
use crate::streams::LabeledSample;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// Train a fresh SVM on the new segment.
    #[default]
    Retrain,
    /// Anchored SVM regularised toward the current weights.
    Adapt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Retrained,
    Adapted,
    Discarded,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Retrained => "retrained",
            Action::Adapted => "adapted",
            Action::Discarded => "discarded",
        }
    }

    fn for_mode(mode: UpdateMode) -> Self {
        match mode {
            UpdateMode::Retrain => Action::Retrained,
            UpdateMode::Adapt => Action::Adapted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEvent {
    pub t_pot: usize,
    pub warn_time: Option<usize>,
    pub verdict: Decision,
    /// Layer-II statistics; absent for single-layer detectors.
    pub e_ord: Option<f64>,
    pub p_value: Option<f64>,
    pub t_confirmed: usize,
    pub action: Action,
    /// The replacement classifier is the single-class fallback.
    pub degenerate: bool,
}

impl DriftEvent {
    pub fn confirmed(&self) -> bool {
        self.action != Action::Discarded
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HhtConfig {
    pub lfr: LfrConfig,
    /// Its window is also the buffer capacity.
    pub permutation: PermutationConfig,
    pub mode: UpdateMode,
    pub min_retrain: usize,
    pub svm: SvmTrainer,
}

impl Default for HhtConfig {
    fn default() -> Self {
        Self {
            lfr: LfrConfig::default(),
            permutation: PermutationConfig::default(),
            mode: UpdateMode::Retrain,
            min_retrain: 20,
            svm: SvmTrainer::default(),
        }
    }
}

impl HhtConfig {
    pub fn validate(&self) -> Result<()> {
        self.lfr.validate()?;
        self.permutation.validate()?;
        if self.min_retrain == 0 || self.min_retrain > self.permutation.window {
            return Err(Error::invalid(format!(
                "min_retrain must lie in [1, window = {}]",
                self.permutation.window
            )));
        }
        Ok(())
    }
}

fn relearn(
    svm: &SvmTrainer,
    mode: UpdateMode,
    current: &SvmModel,
    samples: &[LabeledSample],
) -> Result<SvmModel> {
    match mode {
        UpdateMode::Retrain => svm.train(samples),
        UpdateMode::Adapt if current.degenerate => svm.train(samples),
        UpdateMode::Adapt => svm.train_adaptive(samples, current),
    }
}

fn push_bounded(ring: &mut VecDeque<LabeledSample>, sample: LabeledSample, cap: usize) {
    if ring.len() == cap {
        ring.pop_front();
    }
    ring.push_back(sample);
}

#[derive(Debug, Clone)]
enum Phase {
    Monitoring,
    Collecting {
        t_pot: usize,
        warn_time: Option<usize>,
        before: Vec<LabeledSample>,
        after: Vec<LabeledSample>,
    },
}

/// Outcome of one prequential step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub yhat: u8,
    pub event: Option<DriftEvent>,
}

/// HLFR (retrain) or A-HLFR (adapt).
#[derive(Debug, Clone)]
pub struct Hht {
    config: HhtConfig,
    table: Arc<BoundTable>,
    slices: Slices,
    model: SvmModel,
    state: LfrState,
    ring: VecDeque<LabeledSample>,
    phase: Phase,
}

impl Hht {
    /// `history` must hold at least `W` samples; its tail seeds the buffer.
    pub fn new(
        config: HhtConfig,
        model: SvmModel,
        table: Arc<BoundTable>,
        history: &[LabeledSample],
    ) -> Result<Self> {
        config.validate()?;
        let slices = Slices::resolve(&table, &config.lfr)?;
        let w = config.permutation.window;
        if history.len() < w {
            return Err(Error::invalid(format!(
                "need at least {w} samples of history to fill the permutation window, got {}",
                history.len()
            )));
        }
        Ok(Self {
            ring: history[history.len() - w..].iter().cloned().collect(),
            config,
            table,
            slices,
            model,
            state: LfrState::new(),
            phase: Phase::Monitoring,
        })
    }

    pub fn model(&self) -> &SvmModel {
        &self.model
    }

    pub fn layer_one(&self) -> &LfrState {
        &self.state
    }

    pub fn is_collecting(&self) -> bool {
        matches!(self.phase, Phase::Collecting { .. })
    }

    /// Samples currently held in memory.
    pub fn buffered(&self) -> usize {
        let held = match &self.phase {
            Phase::Monitoring => 0,
            Phase::Collecting { before, after, .. } => before.len() + after.len(),
        };
        self.ring.len() + held
    }

    /// Predicts `sample` with the current classifier, then uses its label.
    pub fn step(&mut self, sample: &LabeledSample) -> Result<StepOutput> {
        let yhat = self.model.predict(&sample.x)?;
        let w = self.config.permutation.window;
        let event = match &mut self.phase {
            Phase::Monitoring => {
                push_bounded(&mut self.ring, sample.clone(), w);
                let signal = lfr_step_resolved(
                    &mut self.state,
                    sample.t,
                    sample.y,
                    yhat,
                    self.config.lfr.eta,
                    self.slices,
                    &self.table,
                )?;
                if signal.kind == SignalKind::PotentialDrift {
                    self.phase = Phase::Collecting {
                        t_pot: sample.t,
                        warn_time: signal.warn_time,
                        before: self.ring.drain(..).collect(),
                        after: Vec::with_capacity(w),
                    };
                }
                None
            }
            Phase::Collecting { after, .. } => {
                after.push(sample.clone());
                if after.len() == w {
                    Some(self.confirm(sample.t)?)
                } else {
                    None
                }
            }
        };
        Ok(StepOutput { yhat, event })
    }

    fn confirm(&mut self, t_now: usize) -> Result<DriftEvent> {
        let Phase::Collecting {
            t_pot,
            warn_time,
            before,
            after,
        } = std::mem::replace(&mut self.phase, Phase::Monitoring)
        else {
            unreachable!("confirm is only called while collecting");
        };
        let perm = PermutationConfig {
            seed: derive_seed(self.config.permutation.seed, t_pot as u64),
            ..self.config.permutation
        };
        let outcome = permutation_test(&before, &after, &self.config.svm, &perm)?;
        drop(before);

        let (action, degenerate) = match outcome.decision {
            Decision::TruePositive => {
                self.model = relearn(&self.config.svm, self.config.mode, &self.model, &after)?;
                (Action::for_mode(self.config.mode), self.model.degenerate)
            }
            Decision::FalsePositive => (Action::Discarded, false),
        };
        lfr_reset(&mut self.state);
        self.ring = after.into();
        Ok(DriftEvent {
            t_pot,
            warn_time,
            verdict: outcome.decision,
            e_ord: Some(outcome.e_ord),
            p_value: Some(outcome.p_value),
            t_confirmed: t_now,
            action,
            degenerate,
        })
    }
}

/// Deployment settings shared by single-layer detectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Deployment {
    pub mode: UpdateMode,
    pub svm: SvmTrainer,
    /// Most recent samples kept for relearning.
    pub window: usize,
    /// Relearning waits until this many samples since the warning are held.
    pub min_retrain: usize,
}

impl Default for Deployment {
    fn default() -> Self {
        Self {
            mode: UpdateMode::Retrain,
            svm: SvmTrainer::default(),
            window: 100,
            min_retrain: 20,
        }
    }
}

/// A single-layer detector deployed with a classifier. After a detection the
/// samples since the warning (at most `window`) are used to relearn; if fewer
/// than `min_retrain` are available, monitoring pauses until enough arrive.
pub struct MonitorRunner {
    monitor: Box<dyn DriftMonitor>,
    deployment: Deployment,
    model: SvmModel,
    ring: VecDeque<LabeledSample>,
    waiting: Option<(usize, Option<usize>, Vec<LabeledSample>)>,
}

impl MonitorRunner {
    pub fn new(monitor: Box<dyn DriftMonitor>, deployment: Deployment, model: SvmModel) -> Result<Self> {
        if deployment.window == 0 || deployment.min_retrain == 0 || deployment.min_retrain > deployment.window {
            return Err(Error::invalid("need 1 <= min_retrain <= window"));
        }
        Ok(Self {
            monitor,
            deployment,
            model,
            ring: VecDeque::with_capacity(deployment.window),
            waiting: None,
        })
    }

    pub fn model(&self) -> &SvmModel {
        &self.model
    }

    pub fn step(&mut self, sample: &LabeledSample) -> Result<StepOutput> {
        let yhat = self.model.predict(&sample.x)?;
        let cap = self.deployment.window;
        if let Some((_, _, collected)) = &mut self.waiting {
            collected.push(sample.clone());
            let ready = collected.len() >= self.deployment.min_retrain;
            if !ready {
                return Ok(StepOutput { yhat, event: None });
            }
            let (t_pot, warn_time, collected) = self.waiting.take().expect("waiting");
            let event = self.relearn(t_pot, warn_time, sample.t, collected)?;
            return Ok(StepOutput {
                yhat,
                event: Some(event),
            });
        }

        push_bounded(&mut self.ring, sample.clone(), cap);
        let warn_before = self.monitor.warn_time();
        let alarm = self.monitor.observe(sample.t, sample.y, yhat)?;
        if alarm != Alarm::Drift {
            return Ok(StepOutput { yhat, event: None });
        }
        let start = warn_before.unwrap_or(sample.t);
        let collected: Vec<LabeledSample> = self.ring.drain(..).filter(|s| s.t >= start).collect();
        if collected.len() >= self.deployment.min_retrain {
            let event = self.relearn(sample.t, warn_before, sample.t, collected)?;
            Ok(StepOutput {
                yhat,
                event: Some(event),
            })
        } else {
            self.waiting = Some((sample.t, warn_before, collected));
            Ok(StepOutput { yhat, event: None })
        }
    }

    fn relearn(
        &mut self,
        t_pot: usize,
        warn_time: Option<usize>,
        t_now: usize,
        samples: Vec<LabeledSample>,
    ) -> Result<DriftEvent> {
        let d = &self.deployment;
        self.model = relearn(&d.svm, d.mode, &self.model, &samples)?;
        self.monitor.reset();
        self.ring = samples.into_iter().rev().take(d.window).rev().collect();
        Ok(DriftEvent {
            t_pot,
            warn_time,
            verdict: Decision::TruePositive,
            e_ord: None,
            p_value: None,
            t_confirmed: t_now,
            action: Action::for_mode(d.mode),
            degenerate: self.model.degenerate,
        })
    }
}

/// Which detector to deploy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorSpec {
    Hlfr {
        #[serde(default)]
        lfr: LfrConfig,
        #[serde(default)]
        permutation: PermutationConfig,
    },
    Lfr {
        #[serde(default)]
        lfr: LfrConfig,
    },
    Ddm(DdmConfig),
    Eddm(EddmConfig),
    Stepd(StepdConfig),
    DdmOci(DdmOciConfig),
}

impl DetectorSpec {
    /// Display name, prefixed with `A-` for anchored updates.
    pub fn name(&self, mode: UpdateMode) -> String {
        let base = match self {
            DetectorSpec::Hlfr { .. } => "HLFR",
            DetectorSpec::Lfr { .. } => "LFR",
            DetectorSpec::Ddm(_) => "DDM",
            DetectorSpec::Eddm(_) => "EDDM",
            DetectorSpec::Stepd(_) => "STEPD",
            DetectorSpec::DdmOci(_) => "DDM-OCI",
        };
        match mode {
            UpdateMode::Retrain => base.to_string(),
            UpdateMode::Adapt => format!("A-{base}"),
        }
    }

    pub fn needs_table(&self) -> bool {
        matches!(self, DetectorSpec::Hlfr { .. } | DetectorSpec::Lfr { .. })
    }

    /// Parses a bare detector name with default settings. DDM-OCI has no
    /// defaults and must be configured explicitly.
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().replace('-', "_").as_str() {
            "hlfr" => Ok(DetectorSpec::Hlfr {
                lfr: LfrConfig::default(),
                permutation: PermutationConfig::default(),
            }),
            "lfr" => Ok(DetectorSpec::Lfr {
                lfr: LfrConfig::default(),
            }),
            "ddm" => Ok(DetectorSpec::Ddm(DdmConfig::default())),
            "eddm" => Ok(DetectorSpec::Eddm(EddmConfig::default())),
            "stepd" => Ok(DetectorSpec::Stepd(StepdConfig::default())),
            "ddm_oci" => Err(Error::invalid(
                "DDM-OCI needs explicit warn_lambda and detect_lambda",
            )),
            _ => Err(Error::UnknownDetector(name.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub t: usize,
    pub y: u8,
    pub yhat: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub events: Vec<DriftEvent>,
    pub predictions: Vec<Prediction>,
}

impl RunLog {
    /// `t_pot` of every event that led to a classifier update.
    pub fn detections(&self) -> Vec<usize> {
        self.events.iter().filter(|e| e.confirmed()).map(|e| e.t_pot).collect()
    }

    /// `t_pot` of every Layer-I alarm, confirmed or not.
    pub fn raw_detections(&self) -> Vec<usize> {
        self.events.iter().map(|e| e.t_pot).collect()
    }
}

enum Engine {
    Hht(Box<Hht>),
    Monitor(MonitorRunner),
}

impl Engine {
    fn step(&mut self, s: &LabeledSample) -> Result<StepOutput> {
        match self {
            Engine::Hht(h) => h.step(s),
            Engine::Monitor(m) => m.step(s),
        }
    }
}

/// Full deployment description for [`run_detector`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub detector: DetectorSpec,
    #[serde(default)]
    pub deployment: Deployment,
}

/// Trains on `samples[..prefix]`, then runs the detector prequentially over
/// the remainder. HLFR uses the permutation window as its buffer and
/// `deployment.min_retrain` as the minimum relearning size.
pub fn run_detector(
    spec: &RunSpec,
    table: Option<Arc<BoundTable>>,
    samples: &[LabeledSample],
    prefix: usize,
) -> Result<RunLog> {
    if prefix == 0 || prefix > samples.len() {
        return Err(Error::invalid(format!(
            "training prefix {prefix} must lie in [1, {}]",
            samples.len()
        )));
    }
    let (head, tail) = samples.split_at(prefix);
    let d = spec.deployment;
    let model = d.svm.train(head)?;
    if model.degenerate {
        return Err(Error::invalid("training prefix holds a single class"));
    }
    let need_table = || {
        table
            .clone()
            .ok_or_else(|| Error::invalid("LFR-based detectors need a bound table"))
    };
    let mut engine = match spec.detector {
        DetectorSpec::Hlfr { lfr, permutation } => {
            let config = HhtConfig {
                lfr,
                permutation,
                mode: d.mode,
                min_retrain: d.min_retrain.min(permutation.window),
                svm: d.svm,
            };
            Engine::Hht(Box::new(Hht::new(config, model, need_table()?, head)?))
        }
        DetectorSpec::Lfr { lfr } => {
            let monitor = Box::new(Lfr::new(lfr, need_table()?)?);
            Engine::Monitor(MonitorRunner::new(monitor, d, model)?)
        }
        DetectorSpec::Ddm(c) => baseline(BaselineConfig::Ddm(c), d, model)?,
        DetectorSpec::Eddm(c) => baseline(BaselineConfig::Eddm(c), d, model)?,
        DetectorSpec::Stepd(c) => baseline(BaselineConfig::Stepd(c), d, model)?,
        DetectorSpec::DdmOci(c) => baseline(BaselineConfig::DdmOci(c), d, model)?,
    };
    let mut log = RunLog {
        events: Vec::new(),
        predictions: Vec::with_capacity(tail.len()),
    };
    for s in tail {
        let out = engine.step(s)?;
        log.predictions.push(Prediction {
            t: s.t,
            y: s.y,
            yhat: out.yhat,
        });
        log.events.extend(out.event);
    }
    Ok(log)
}

fn baseline(config: BaselineConfig, d: Deployment, model: SvmModel) -> Result<Engine> {
    Ok(Engine::Monitor(MonitorRunner::new(config.build()?, d, model)?))
}

/// HLFR or A-HLFR with the given configuration.
pub fn run_stream(
    config: &HhtConfig,
    table: Arc<BoundTable>,
    samples: &[LabeledSample],
    prefix: usize,
) -> Result<RunLog> {
    let spec = RunSpec {
        detector: DetectorSpec::Hlfr {
            lfr: config.lfr,
            permutation: config.permutation,
        },
        deployment: Deployment {
            mode: config.mode,
            svm: config.svm,
            window: config.permutation.window,
            min_retrain: config.min_retrain,
        },
    };
    run_detector(&spec, Some(table), samples, prefix)
}

pub const EVENT_HEADER: &str = "t_pot,verdict,t_confirmed,action";
pub const PREDICTION_HEADER: &str = "t,y,yhat";
pub const OUTCOME_HEADER: &str = "t_pot,e_ord,p_value,decision";

pub fn write_events<W: Write>(mut out: W, events: &[DriftEvent]) -> Result<()> {
    writeln!(out, "{EVENT_HEADER}")?;
    for e in events {
        writeln!(
            out,
            "{},{},{},{}",
            e.t_pot,
            e.verdict.as_str(),
            e.t_confirmed,
            e.action.as_str()
        )?;
    }
    Ok(())
}

/// Layer-II outcomes of the events that went through the permutation test.
pub fn write_outcomes<W: Write>(mut out: W, events: &[DriftEvent]) -> Result<()> {
    writeln!(out, "{OUTCOME_HEADER}")?;
    for e in events {
        if let (Some(e_ord), Some(p)) = (e.e_ord, e.p_value) {
            writeln!(out, "{},{e_ord},{p},{}", e.t_pot, e.verdict.as_str())?;
        }
    }
    Ok(())
}

pub fn write_predictions<W: Write>(mut out: W, predictions: &[Prediction]) -> Result<()> {
    writeln!(out, "{PREDICTION_HEADER}")?;
    for p in predictions {
        writeln!(out, "{},{},{}", p.t, p.y, p.yhat)?;
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(field: Option<&str>, what: &str) -> std::result::Result<T, String> {
    field
        .ok_or_else(|| format!("missing {what}"))?
        .trim()
        .parse()
        .map_err(|_| format!("bad {what}"))
}

/// Reads an event log written by [`write_events`].
pub fn read_events(path: &std::path::Path) -> Result<Vec<DriftEvent>> {
    let text = std::fs::read_to_string(path)?;
    let mut events = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line == EVENT_HEADER {
            continue;
        }
        let row = |message: String| Error::Row {
            path: path.to_path_buf(),
            row: k + 1,
            message,
        };
        let mut f = line.split(',');
        let t_pot: usize = parse_field(f.next(), "t_pot").map_err(row)?;
        let verdict = match f.next().map(str::trim) {
            Some("true_positive") => Decision::TruePositive,
            Some("false_positive") => Decision::FalsePositive,
            _ => return Err(row("verdict must be true_positive or false_positive".into())),
        };
        let t_confirmed: usize = parse_field(f.next(), "t_confirmed").map_err(row)?;
        let action = match f.next().map(str::trim) {
            Some("retrained") => Action::Retrained,
            Some("adapted") => Action::Adapted,
            Some("discarded") => Action::Discarded,
            _ => return Err(row("action must be retrained, adapted or discarded".into())),
        };
        events.push(DriftEvent {
            t_pot,
            warn_time: None,
            verdict,
            e_ord: None,
            p_value: None,
            t_confirmed,
            action,
            degenerate: false,
        });
    }
    Ok(events)
}

/// Reads a prediction log written by [`write_predictions`].
pub fn read_predictions(path: &std::path::Path) -> Result<Vec<Prediction>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line == PREDICTION_HEADER {
            continue;
        }
        let row = |message: String| Error::Row {
            path: path.to_path_buf(),
            row: k + 1,
            message,
        };
        let mut f = line.split(',');
        let t = parse_field(f.next(), "t").map_err(row)?;
        let y: u8 = parse_field(f.next(), "y").map_err(row)?;
        let yhat: u8 = parse_field(f.next(), "yhat").map_err(row)?;
        if y > 1 || yhat > 1 {
            return Err(row("labels must be 0 or 1".into()));
        }
        out.push(Prediction { t, y, yhat });
    }
    Ok(out)
}
