//! Brownian motion of rigid crystals at low temperature: potential, crystal
//! construction, rigidity spectra, rigid-body fits, overdamped dynamics and
//! the macroscopic limit statistics.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod crystal;
pub mod dynamics;
pub mod error;
pub mod fit;
pub mod harness;
pub mod lie;
pub mod limits;
pub mod points;
pub mod potential;
pub mod rigidity;
pub mod stats;

#[cfg(test)]
mod proptests;

pub use crystal::{Crystal, Domain};
pub use dynamics::{PathRecord, SdeConfig};
pub use fit::Decomposition;
pub use harness::{ExperimentConfig, Pipeline};
pub use limits::{LawReport, MacroscopicBody};
pub use rigidity::RigidityReport;
pub use error::{Error, Result};
pub use points::{Configuration, DisplacementField};
pub use potential::PotentialSpec;
