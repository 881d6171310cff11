//! Common per-sample interface shared by LFR and the baseline detectors.

use serde::{Deserialize, Serialize};

use crate::Result;

/// State reported after each observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alarm {
    Stable,
    Warning,
    Drift,
}

impl Alarm {
    pub fn as_str(self) -> &'static str {
        match self {
            Alarm::Stable => "stable",
            Alarm::Warning => "warning",
            Alarm::Drift => "drift",
        }
    }
}

/// A detector fed with the true label and the prediction made before it.
///
/// After returning [`Alarm::Drift`] a monitor has already reset itself and
/// starts monitoring the next concept.
pub trait DriftMonitor: Send {
    fn observe(&mut self, t: usize, y: u8, yhat: u8) -> Result<Alarm>;

    /// Restarts from the initial state.
    fn reset(&mut self);

    /// Start of the current warning period, if any.
    fn warn_time(&self) -> Option<usize>;

    fn name(&self) -> &'static str;
}

pub(crate) fn check_labels(y: u8, yhat: u8) -> Result<()> {
    for v in [y, yhat] {
        if v > 1 {
            return Err(crate::Error::InvalidLabel(v as i64));
        }
    }
    Ok(())
}
