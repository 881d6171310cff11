//! Layer-II test: permutation test on the zero-one loss of an ordered
//! train/test split.
//!
//! A classifier trained on the `W` samples before the potential drift is
//! tested on the `W` samples after it, giving `E_ord`. Each trial splits the
//! pooled `2W` samples uniformly into two halves, trains on one and tests on
//! the other, giving `E_i`. The drift is confirmed when
//!
//! ```text
//! (1 + #{i : E_ord <= E_i}) / (1 + P) <= significance
//! ```
//!
//! i.e. when the ordered loss is unusually large compared to shuffled splits.

use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{Learner, SvmModel};
use crate::seed::child_rng;
use crate::streams::LabeledSample;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PermutationConfig {
    pub window: usize,
    pub trials: usize,
    pub significance: f64,
    pub seed: u64,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        Self {
            window: 100,
            trials: 1000,
            significance: 0.05,
            seed: 0,
        }
    }
}

impl PermutationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::invalid("permutation window must be at least 2"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("at least one permutation trial is required"));
        }
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return Err(Error::invalid("permutation significance must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    TruePositive,
    FalsePositive,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::TruePositive => "true_positive",
            Decision::FalsePositive => "false_positive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationOutcome {
    pub e_ord: f64,
    pub e_perm: Vec<f64>,
    pub p_value: f64,
    pub decision: Decision,
    /// The ordered-split classifier was the single-class fallback.
    pub ordered_degenerate: bool,
    /// Number of trials whose training half held a single class.
    pub degenerate_trials: usize,
}

/// `(1 + #{E_ord <= E_i}) / (1 + P)`.
pub fn p_value_from(e_ord: f64, e_perm: &[f64]) -> f64 {
    let at_least = e_perm.iter().filter(|&&e| e_ord <= e).count();
    (1 + at_least) as f64 / (1 + e_perm.len()) as f64
}

fn loss(model: &SvmModel, test: &[&LabeledSample]) -> f64 {
    let wrong = test
        .iter()
        .filter(|s| model.predict_unchecked(&s.x) != s.y)
        .count();
    wrong as f64 / test.len() as f64
}

fn check_segments(before: &[LabeledSample], after: &[LabeledSample]) -> Result<()> {
    if before.len() != after.len() {
        return Err(Error::invalid(format!(
            "segments differ in length: {} before, {} after",
            before.len(),
            after.len()
        )));
    }
    let Some(first) = before.first() else {
        return Err(Error::EmptyInput("permutation test needs samples"));
    };
    let d = first.dim();
    if let Some(s) = before.iter().chain(after).find(|s| s.dim() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: s.dim(),
        });
    }
    Ok(())
}

/// Runs the test on two segments of `config.window` samples each. Trial `i`
/// draws its split from `child_rng(config.seed, i)`, so the outcome does not
/// depend on scheduling.
pub fn permutation_test<L: Learner>(
    before: &[LabeledSample],
    after: &[LabeledSample],
    learner: &L,
    config: &PermutationConfig,
) -> Result<PermutationOutcome> {
    config.validate()?;
    check_segments(before, after)?;
    if before.len() != config.window {
        return Err(Error::invalid(format!(
            "segments hold {} samples, window is {}",
            before.len(),
            config.window
        )));
    }
    let w = config.window;

    let before_refs: Vec<&LabeledSample> = before.iter().collect();
    let after_refs: Vec<&LabeledSample> = after.iter().collect();
    let ordered = learner.fit(&before_refs)?;
    let e_ord = loss(&ordered, &after_refs);

    let pooled: Vec<&LabeledSample> = before.iter().chain(after).collect();
    let trials: Vec<(f64, bool)> = (0..config.trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = child_rng(config.seed, i as u64);
            let mut in_train = vec![false; 2 * w];
            for k in sample_indices(&mut rng, 2 * w, w) {
                in_train[k] = true;
            }
            let (train, test): (Vec<&LabeledSample>, Vec<&LabeledSample>) =
                pooled.iter().zip(&in_train).fold(
                    (Vec::with_capacity(w), Vec::with_capacity(w)),
                    |(mut tr, mut te), (s, &is_train)| {
                        if is_train {
                            tr.push(*s);
                        } else {
                            te.push(*s);
                        }
                        (tr, te)
                    },
                );
            let model = learner.fit(&train)?;
            Ok((loss(&model, &test), model.degenerate))
        })
        .collect::<Result<_>>()?;

    let e_perm: Vec<f64> = trials.iter().map(|t| t.0).collect();
    let p_value = p_value_from(e_ord, &e_perm);
    Ok(PermutationOutcome {
        decision: if p_value <= config.significance {
            Decision::TruePositive
        } else {
            Decision::FalsePositive
        },
        e_ord,
        p_value,
        ordered_degenerate: ordered.degenerate,
        degenerate_trials: trials.iter().filter(|t| t.1).count(),
        e_perm,
    })
}
