//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use hlfr::analysis::PowerConfig;
use hlfr::boundtable::{BoundTable, DEFAULT_DRAWS};
use hlfr::evaluation::Prequential;
use hlfr::hht::{Deployment, DetectorSpec, RunSpec, UpdateMode};
use hlfr::seed::derive_seed;
use hlfr::streams::{Generator, StreamSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Seed index reserved for the Layer-II permutations of a run.
const PERMUTATION_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableConfig {
    /// Existing table for LFR-based detectors; written by `boundtable`.
    pub path: Option<PathBuf>,
    pub eta: Vec<f64>,
    pub significance: Vec<f64>,
    pub m_draws: usize,
    pub seed: u64,
}

impl Default for TableConfig {
    fn default() -> Self {
        Self {
            path: None,
            eta: vec![0.9],
            significance: vec![0.0001, 0.01],
            m_draws: DEFAULT_DRAWS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub stream: Option<StreamSpec>,
    /// Detector names (`"hlfr"`) or full objects (`{"kind": "ddm_oci", ...}`).
    #[serde(serialize_with = "ser_detectors", deserialize_with = "de_detectors")]
    pub detectors: Vec<DetectorSpec>,
    pub mode: UpdateMode,
    pub deployment: Deployment,
    /// Leading samples used to train the initial classifier.
    pub train_size: usize,
    pub seed: u64,
    pub runs: usize,
    pub delay_range: i64,
    pub delay_grid: Vec<i64>,
    /// Prequential window; 0 selects the cumulative mode.
    pub prequential_window: usize,
    pub table: TableConfig,
    pub power: PowerConfig,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            stream: None,
            detectors: vec![DetectorSpec::from_name("hlfr").expect("built-in name")],
            mode: UpdateMode::Retrain,
            deployment: Deployment::default(),
            train_size: 500,
            seed: 0,
            runs: 1,
            delay_range: 200,
            delay_grid: (0..=10).map(|k| k * 50).collect(),
            prequential_window: 500,
            table: TableConfig::default(),
            power: PowerConfig::default(),
            out: None,
        }
    }
}

fn ser_detectors<S: serde::Serializer>(d: &[DetectorSpec], s: S) -> Result<S::Ok, S::Error> {
    d.serialize(s)
}

fn de_detectors<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<DetectorSpec>, D::Error> {
    use serde::de::Error;
    let values = Vec::<Value>::deserialize(d)?;
    values
        .into_iter()
        .map(|v| match v {
            Value::String(name) => DetectorSpec::from_name(&name).map_err(D::Error::custom),
            other => serde_json::from_value(other).map_err(D::Error::custom),
        })
        .collect()
}

impl ExperimentConfig {
    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut config: Self = serde_json::from_str(&text)
            .with_context(|| format!("{} does not match the experiment schema", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.rebase(base);
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = &mut self.table.path {
            fix(p);
        }
        if let Some(p) = &mut self.out {
            fix(p);
        }
        if let Some(StreamSpec {
            generator: Generator::Csv { path, drifts },
            ..
        }) = &mut self.stream
        {
            fix(path);
            if let Some(d) = drifts {
                fix(d);
            }
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.runs == 0 {
            bail!("runs must be at least 1");
        }
        if self.train_size == 0 {
            bail!("train_size must be at least 1");
        }
        if self.delay_range < 0 || self.delay_grid.iter().any(|&d| d < 0) {
            bail!("delay ranges must be non-negative");
        }
        if self.delay_grid.windows(2).any(|w| w[0] >= w[1]) {
            bail!("delay_grid must be strictly increasing");
        }
        if self.detectors.is_empty() {
            bail!("at least one detector is required");
        }
        Ok(())
    }

    pub fn stream(&self) -> anyhow::Result<&StreamSpec> {
        self.stream
            .as_ref()
            .context("this command needs a `stream` section in the config")
    }

    pub fn prequential(&self) -> Prequential {
        match self.prequential_window {
            0 => Prequential::Cumulative,
            w => Prequential::Windowed(w),
        }
    }

    /// Seed of run `r`.
    pub fn run_seed(&self, r: usize) -> u64 {
        derive_seed(self.seed, r as u64)
    }

    /// Stream of run `r`: the configured spec reseeded per run.
    pub fn run_stream(&self, r: usize) -> anyhow::Result<StreamSpec> {
        let mut spec = self.stream()?.clone();
        spec.seed = derive_seed(spec.seed, self.run_seed(r));
        Ok(spec)
    }

    /// Deployment of `detector` in run `r`, with per-run Layer-II seeds.
    pub fn run_spec(&self, detector: &DetectorSpec, r: usize) -> RunSpec {
        let mut detector = *detector;
        if let DetectorSpec::Hlfr { permutation, .. } = &mut detector {
            permutation.seed = derive_seed(self.run_seed(r), PERMUTATION_STREAM);
        }
        RunSpec {
            detector,
            deployment: Deployment {
                mode: self.mode,
                ..self.deployment
            },
        }
    }

    pub fn needs_table(&self) -> bool {
        self.detectors.iter().any(DetectorSpec::needs_table)
    }

    pub fn load_table(&self) -> anyhow::Result<BoundTable> {
        let Some(path) = &self.table.path else {
            bail!("set `table.path` to a bound table (build one with `hlfr boundtable`)");
        };
        if !path.exists() {
            bail!(
                "bound table {} does not exist; build it with `hlfr boundtable`",
                path.display()
            );
        }
        BoundTable::load(path).with_context(|| format!("cannot load bound table {}", path.display()))
    }

    /// Compact one-line JSON of the resolved configuration.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = ExperimentConfig::default();
        let back: ExperimentConfig = serde_json::from_str(&c.to_json_line()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn detector_names_and_objects() {
        let c: ExperimentConfig = serde_json::from_str(
            r#"{"detectors": ["hlfr", "DDM", {"kind": "ddm_oci", "warn_lambda": 2, "detect_lambda": 3}]}"#,
        )
        .unwrap();
        assert_eq!(c.detectors.len(), 3);
        assert_eq!(c.detectors[2].name(UpdateMode::Retrain), "DDM-OCI");
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"detectors": ["adwin"]}"#).unwrap_err();
        assert!(err.to_string().contains("adwin"));
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"runz": 3}"#).is_err());
    }

    #[test]
    fn per_run_seeds_differ() {
        let c = ExperimentConfig {
            stream: Some(StreamSpec::new("sea".parse().unwrap(), 100, 1)),
            ..ExperimentConfig::default()
        };
        assert_ne!(c.run_stream(0).unwrap().seed, c.run_stream(1).unwrap().seed);
        let a = c.run_spec(&c.detectors[0], 0);
        let b = c.run_spec(&c.detectors[0], 1);
        assert_ne!(a, b);
    }
}
