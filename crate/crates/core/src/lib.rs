//! Physics-guided multi-source adversarial domain adaptation for
//! vibration-based structural damage diagnosis.
//!
//! The crate is organized as a pipeline:
//!
//! * [`quakesim`] generates labeled seismic responses of nonlinear shear
//!   buildings under scaled stochastic ground motions.
//! * [`sigprep`] turns response windows into stacked 3-channel spectra.
//! * [`physweights`] derives source-domain weights from physical
//!   similarity between buildings.
//! * [`adapt`] builds the extractor / predictor / discriminator networks
//!   on top of [`autodiff`] and trains them with gradient reversal.
//! * [`harness`] runs experiments, baselines, sweeps and diagnostics.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod autodiff;
pub mod error;
pub mod harness;
pub mod physweights;
pub mod quakesim;
pub mod sigprep;

pub use error::{Error, Result};

/// Damage-diagnosis task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Binary: damaged or not.
    Detection,
    /// Five drift-based damage states.
    Quantification,
}

impl Task {
    pub fn num_classes(self) -> usize {
        match self {
            Task::Detection => 2,
            Task::Quantification => 5,
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "detection" => Ok(Task::Detection),
            "quantification" => Ok(Task::Quantification),
            other => Err(Error::arg(format!(
                "unknown task {other:?} (expected detection or quantification)"
            ))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Detection => "detection",
            Task::Quantification => "quantification",
        })
    }
}
