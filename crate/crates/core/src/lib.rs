//! Concept drift detection and adaptation for streaming binary classifiers.
//!
//! The crate is organised around a two-layer detector:
//!
//! * [`lfr`] monitors the four confusion-matrix rates of a deployed classifier
//!   online and raises *potential* drifts using Monte-Carlo bounds from
//!   [`boundtable`].
//! * [`permtest`] confirms or rejects a potential drift with a permutation
//!   test on the samples around it.
//! * [`hht`] wires both layers around a linear SVM from [`classifier`],
//!   relearning (or adapting, via the anchored SVM) once a drift is confirmed.
//!
//! [`baselines`] provides DDM, EDDM, STEPD and DDM-OCI behind the same
//! [`monitor::DriftMonitor`] interface, [`streams`] produces benchmark streams
//! with known drift locations, [`evaluation`] scores detections and
//! prequential accuracy, and [`analysis`] holds the error-composition and
//! power-estimation tools.

pub mod analysis;
pub mod baselines;
pub mod boundtable;
pub mod classifier;
mod error;
pub mod evaluation;
pub mod hht;
pub mod lfr;
pub mod monitor;
pub mod permtest;
pub mod seed;
pub mod streams;

pub use error::{Error, Result};
