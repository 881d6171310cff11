//! Benchmark stream generators with known drift locations, plus CSV ingestion.
//!
//! A stream is a sequence of [`LabeledSample`]s with 1-based time indices.
//! Drift times `g` split the stream into segments: sample `t` belongs to the
//! segment numbered by how many drift times are strictly smaller than `t`, so
//! the first sample of a new concept is `g + 1`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed::{rng_from, StreamRng};
use crate::{Error, Result};

/// One stream element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub t: usize,
    pub x: Vec<f64>,
    pub y: u8,
}

impl LabeledSample {
    pub fn new(t: usize, x: Vec<f64>, y: u8) -> Result<Self> {
        if y > 1 {
            return Err(Error::InvalidLabel(y as i64));
        }
        Ok(Self { t, x, y })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// A generated or loaded stream together with its drift ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub samples: Vec<LabeledSample>,
    pub drift_times: Vec<usize>,
}

impl Stream {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.samples.first().map(LabeledSample::dim)
    }

    /// Concept segment containing time index `t`.
    pub fn segment_of(&self, t: usize) -> usize {
        segment_of(&self.drift_times, t)
    }
}

pub fn segment_of(drift_times: &[usize], t: usize) -> usize {
    drift_times.partition_point(|&g| g < t)
}

/// Drift placement used when a spec does not give one: four equal segments.
pub fn equal_segments(length: usize, segments: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (1..segments)
        .map(|k| k * length / segments)
        .filter(|&g| g > 0 && g < length)
        .collect();
    out.dedup();
    out
}

/// Which generator to run, with its own parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Generator {
    /// Three (or more) features uniform on [0, 10]; `y = 1` iff `x1 + x2 <= theta`.
    Sea {
        #[serde(default = "default_sea_dim")]
        dim: usize,
        #[serde(default = "default_sea_thresholds")]
        thresholds: Vec<f64>,
    },
    /// Two features uniform on the unit square labelled by a rotated XOR tiling.
    Checkerboard {
        #[serde(default = "default_tile")]
        tile: f64,
        #[serde(default = "default_angle_step")]
        angle_step: f64,
    },
    /// Features uniform on the unit cube; `y = 1` iff `w.x >= sum(w)/2`, with
    /// `w` drifting gradually inside a segment and jumping at drift times.
    Hyperplane {
        #[serde(default = "default_hyperplane_dim")]
        dim: usize,
        #[serde(default = "default_drift_rate")]
        drift_rate: f64,
        /// Base weight vector per segment, cycled. Two random vectors
        /// alternating when absent.
        #[serde(default)]
        concepts: Option<Vec<Vec<f64>>>,
    },
    /// Sparse binary features in three topic blocks; the label is the
    /// interest in the message's topic, flipped between segments.
    Highdim {
        #[serde(default = "default_highdim_dim")]
        dim: usize,
        #[serde(default = "default_active")]
        active: usize,
        /// Interest per topic for each segment, cycled.
        #[serde(default = "default_interests")]
        interests: Vec<[bool; 3]>,
    },
    /// An external stream in the `f1,...,fd,label` schema.
    Csv {
        path: PathBuf,
        #[serde(default)]
        drifts: Option<PathBuf>,
    },
}

fn default_sea_dim() -> usize {
    3
}
fn default_sea_thresholds() -> Vec<f64> {
    vec![8.0, 9.0, 7.0, 9.5]
}
fn default_tile() -> f64 {
    0.5
}
fn default_angle_step() -> f64 {
    PI / 4.0
}
fn default_hyperplane_dim() -> usize {
    10
}
fn default_drift_rate() -> f64 {
    1e-4
}
fn default_highdim_dim() -> usize {
    99
}
fn default_active() -> usize {
    5
}
fn default_interests() -> Vec<[bool; 3]> {
    vec![[true, false, false], [false, true, true]]
}

impl FromStr for Generator {
    type Err = Error;

    /// Builds a generator with default parameters from its name.
    fn from_str(name: &str) -> Result<Self> {
        match name {
            "sea" => Ok(Generator::Sea {
                dim: default_sea_dim(),
                thresholds: default_sea_thresholds(),
            }),
            "checkerboard" => Ok(Generator::Checkerboard {
                tile: default_tile(),
                angle_step: default_angle_step(),
            }),
            "hyperplane" => Ok(Generator::Hyperplane {
                dim: default_hyperplane_dim(),
                drift_rate: default_drift_rate(),
                concepts: None,
            }),
            "highdim" => Ok(Generator::Highdim {
                dim: default_highdim_dim(),
                active: default_active(),
                interests: default_interests(),
            }),
            other => Err(Error::UnknownGenerator(other.to_string())),
        }
    }
}

/// Everything needed to reproduce a stream bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub generator: Generator,
    pub length: usize,
    /// Ground-truth drift times; four equal segments when absent.
    #[serde(default)]
    pub drift_times: Option<Vec<usize>>,
    /// Positive-class prior per segment (cycled). Labels follow the concept
    /// rule's natural prior when absent.
    #[serde(default)]
    pub imbalance: Option<Vec<f64>>,
    /// Probability of flipping each generated label.
    #[serde(default)]
    pub label_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

impl StreamSpec {
    pub fn new(generator: Generator, length: usize, seed: u64) -> Self {
        Self {
            generator,
            length,
            drift_times: None,
            imbalance: None,
            label_noise: 0.0,
            seed,
        }
    }

    pub fn with_drifts(mut self, drift_times: Vec<usize>) -> Self {
        self.drift_times = Some(drift_times);
        self
    }

    pub fn with_imbalance(mut self, priors: Vec<f64>) -> Self {
        self.imbalance = Some(priors);
        self
    }

    pub fn with_label_noise(mut self, p: f64) -> Self {
        self.label_noise = p;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn resolved_drift_times(&self) -> Vec<usize> {
        match &self.drift_times {
            Some(d) => d.clone(),
            None => equal_segments(self.length, 4),
        }
    }

    fn validate(&self) -> Result<Vec<usize>> {
        let drifts = self.resolved_drift_times();
        for w in drifts.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::invalid("drift_times must be strictly increasing"));
            }
        }
        if let Some(&g) = drifts.iter().find(|&&g| g == 0 || g >= self.length) {
            return Err(Error::invalid(format!(
                "drift time {g} outside [1, {}) for a stream of length {}",
                self.length, self.length
            )));
        }
        if let Some(priors) = &self.imbalance {
            if priors.is_empty() {
                return Err(Error::invalid("imbalance priors must be nonempty"));
            }
            if let Some(p) = priors.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
                return Err(Error::invalid(format!("imbalance prior {p} outside (0, 1)")));
            }
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::invalid("label_noise must lie in [0, 1]"));
        }
        Ok(drifts)
    }
}

/// Upper bound on rejection-sampling attempts when enforcing a class prior.
const MAX_REJECTIONS: usize = 100_000;

/// Concept parameters of one generator, resolved against a seed.
enum Concepts {
    Sea {
        dim: usize,
        thresholds: Vec<f64>,
    },
    Checkerboard {
        tile: f64,
        angle_step: f64,
    },
    Hyperplane {
        dim: usize,
        drift_rate: f64,
        bases: Vec<Vec<f64>>,
        directions: Vec<Vec<f64>>,
    },
    Highdim {
        dim: usize,
        active: usize,
        interests: Vec<[bool; 3]>,
    },
}

impl Concepts {
    fn resolve(generator: &Generator, rng: &mut StreamRng) -> Result<Self> {
        match generator {
            Generator::Sea { dim, thresholds } => {
                if *dim < 2 {
                    return Err(Error::invalid("sea needs dim >= 2"));
                }
                if thresholds.is_empty() {
                    return Err(Error::invalid("sea needs at least one threshold"));
                }
                Ok(Concepts::Sea {
                    dim: *dim,
                    thresholds: thresholds.clone(),
                })
            }
            Generator::Checkerboard { tile, angle_step } => {
                if !(*tile > 0.0) {
                    return Err(Error::invalid("checkerboard tile must be positive"));
                }
                Ok(Concepts::Checkerboard {
                    tile: *tile,
                    angle_step: *angle_step,
                })
            }
            Generator::Hyperplane {
                dim,
                drift_rate,
                concepts,
            } => {
                if *dim == 0 {
                    return Err(Error::invalid("hyperplane needs dim >= 1"));
                }
                let bases = match concepts {
                    Some(c) => {
                        if c.is_empty() {
                            return Err(Error::invalid("hyperplane concepts must be nonempty"));
                        }
                        if let Some(bad) = c.iter().find(|w| w.len() != *dim) {
                            return Err(Error::DimensionMismatch {
                                expected: *dim,
                                got: bad.len(),
                            });
                        }
                        c.clone()
                    }
                    None => (0..2)
                        .map(|_| (0..*dim).map(|_| rng.gen::<f64>()).collect())
                        .collect(),
                };
                let directions = bases
                    .iter()
                    .map(|_| {
                        (0..*dim)
                            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
                            .collect()
                    })
                    .collect();
                Ok(Concepts::Hyperplane {
                    dim: *dim,
                    drift_rate: *drift_rate,
                    bases,
                    directions,
                })
            }
            Generator::Highdim {
                dim,
                active,
                interests,
            } => {
                if *dim < 3 {
                    return Err(Error::invalid("highdim needs dim >= 3"));
                }
                if *active == 0 || *active > dim / 3 {
                    return Err(Error::invalid(format!(
                        "highdim active count must lie in [1, {}]",
                        dim / 3
                    )));
                }
                if interests.is_empty() {
                    return Err(Error::invalid("highdim interests must be nonempty"));
                }
                Ok(Concepts::Highdim {
                    dim: *dim,
                    active: *active,
                    interests: interests.clone(),
                })
            }
            Generator::Csv { .. } => unreachable!("csv streams are loaded, not generated"),
        }
    }

    fn draw(&self, rng: &mut StreamRng) -> Vec<f64> {
        match self {
            Concepts::Sea { dim, .. } => (0..*dim).map(|_| rng.gen_range(0.0..10.0)).collect(),
            Concepts::Checkerboard { .. } => vec![rng.gen::<f64>(), rng.gen::<f64>()],
            Concepts::Hyperplane { dim, .. } => (0..*dim).map(|_| rng.gen::<f64>()).collect(),
            Concepts::Highdim { dim, active, .. } => {
                let block = dim / 3;
                let topic = rng.gen_range(0..3);
                let mut x = vec![0.0; *dim];
                for j in sample_indices(rng, block, *active) {
                    x[topic * block + j] = 1.0;
                }
                x
            }
        }
    }

    /// Concept rule of segment `seg`, `offset` samples after its start.
    fn label(&self, seg: usize, offset: usize, x: &[f64]) -> u8 {
        match self {
            Concepts::Sea { thresholds, .. } => {
                let theta = thresholds[seg % thresholds.len()];
                u8::from(x[0] + x[1] <= theta)
            }
            Concepts::Checkerboard { tile, angle_step } => {
                let angle = seg as f64 * angle_step;
                let (s, c) = angle.sin_cos();
                let (dx, dy) = (x[0] - 0.5, x[1] - 0.5);
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                let parity = ((u / tile).floor() as i64 + (v / tile).floor() as i64).rem_euclid(2);
                parity as u8
            }
            Concepts::Hyperplane {
                drift_rate,
                bases,
                directions,
                ..
            } => {
                let k = seg % bases.len();
                let shift = drift_rate * offset as f64;
                let mut dot = 0.0;
                let mut total = 0.0;
                for ((b, d), xi) in bases[k].iter().zip(&directions[k]).zip(x) {
                    let w = b + d * shift;
                    dot += w * xi;
                    total += w;
                }
                u8::from(dot >= 0.5 * total)
            }
            Concepts::Highdim { dim, interests, .. } => {
                let block = dim / 3;
                let topic = x
                    .iter()
                    .position(|&v| v != 0.0)
                    .map(|j| (j / block).min(2))
                    .unwrap_or(0);
                u8::from(interests[seg % interests.len()][topic])
            }
        }
    }
}

/// Generates the stream described by `spec`.
///
/// Identical specs (seed included) give bit-identical streams.
pub fn generate(spec: &StreamSpec) -> Result<Stream> {
    if let Generator::Csv { path, drifts } = &spec.generator {
        let mut samples = read_csv(path)?;
        samples.truncate(if spec.length == 0 { samples.len() } else { spec.length });
        let drift_times = match (&spec.drift_times, drifts) {
            (Some(d), _) => d.clone(),
            (None, Some(p)) => read_drifts(p)?,
            (None, None) => Vec::new(),
        };
        return Ok(Stream {
            samples,
            drift_times,
        });
    }

    let drift_times = spec.validate()?;
    let mut rng = rng_from(spec.seed);
    let concepts = Concepts::resolve(&spec.generator, &mut rng)?;
    let mut samples = Vec::with_capacity(spec.length);

    for t in 1..=spec.length {
        let seg = segment_of(&drift_times, t);
        let seg_start = if seg == 0 { 0 } else { drift_times[seg - 1] };
        let offset = t - seg_start - 1;

        let (x, mut y) = match &spec.imbalance {
            None => {
                let x = concepts.draw(&mut rng);
                let y = concepts.label(seg, offset, &x);
                (x, y)
            }
            Some(priors) => {
                let prior = priors[seg % priors.len()];
                let target = u8::from(rng.gen::<f64>() < prior);
                let mut attempt = 0;
                loop {
                    let x = concepts.draw(&mut rng);
                    if concepts.label(seg, offset, &x) == target {
                        break (x, target);
                    }
                    attempt += 1;
                    if attempt >= MAX_REJECTIONS {
                        return Err(Error::invalid(format!(
                            "class prior {prior} cannot be met by segment {seg}'s concept"
                        )));
                    }
                }
            }
        };
        if spec.label_noise > 0.0 && rng.gen::<f64>() < spec.label_noise {
            y = 1 - y;
        }
        samples.push(LabeledSample { t, x, y });
    }

    Ok(Stream {
        samples,
        drift_times,
    })
}

/// Writes samples in the `f1,...,fd,label` schema.
pub fn write_csv<W: Write>(writer: W, samples: &[LabeledSample]) -> Result<()> {
    let mut out = BufWriter::new(writer);
    let d = samples.first().map_or(0, LabeledSample::dim);
    let header: Vec<String> = (1..=d)
        .map(|j| format!("f{j}"))
        .chain(std::iter::once("label".to_string()))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for s in samples {
        if s.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: s.dim(),
            });
        }
        for v in &s.x {
            write!(out, "{v},")?;
        }
        writeln!(out, "{}", s.y)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_csv(path: impl AsRef<Path>, samples: &[LabeledSample]) -> Result<()> {
    write_csv(File::create(path)?, samples)
}

/// Reads a stream file. Data row `k` (1-based, header excluded) becomes `t = k`.
/// Lines starting with `#` are ignored.
pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<LabeledSample>> {
    let path = path.as_ref();
    let row_err = |row: usize, message: String| Error::Row {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let header = reader
        .headers()
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .clone();
    let columns = header.len();
    if columns < 2 || &header[columns - 1] != "label" {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "header must list feature columns followed by `label`".into(),
        });
    }
    let d = columns - 1;

    let mut samples = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| row_err(row, e.to_string()))?;
        if record.len() != columns {
            return Err(row_err(
                row,
                format!("expected {columns} columns, found {}", record.len()),
            ));
        }
        let x = record
            .iter()
            .take(d)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| row_err(row, format!("`{v}` is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let label = &record[d];
        let y = match label {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(row_err(row, format!("label `{other}` is not 0 or 1")));
            }
        };
        samples.push(LabeledSample { t: row, x, y });
    }
    Ok(samples)
}

/// Writes the ground-truth sidecar: one drift index per line.
pub fn write_drifts(path: impl AsRef<Path>, drifts: &[usize]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for g in drifts {
        writeln!(out, "{g}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_drifts(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut drifts = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        drifts.push(line.parse().map_err(|_| Error::Row {
            path: path.to_path_buf(),
            row: k + 1,
            message: format!("`{line}` is not a drift index"),
        })?);
    }
    Ok(drifts)
}
