//! Simulation and statistics for single-shot readout of a nuclear spin that is
//! repetitively mapped onto a color-center electron spin.
//!
//! The crate is organized bottom-up:
//!
//! - [`model`]: physical parameters, ground-state level diagram, ODMR synthesis
//! - [`optics`]: rate-equation model of the optical cycle and pumping curves
//! - [`protocol`]: typed pulse schedules, a small text format, gate actions
//! - [`trajectory`]: seeded, parallel Monte Carlo engine producing shot records
//! - [`analysis`]: exact count distributions, classification, post-selection,
//!   fidelity reports, fits, threshold optimization and what-if scenarios

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
mod error;
pub mod model;
pub mod optics;
pub mod optim;
pub mod protocol;
pub mod stats;
pub mod trajectory;

pub use error::{Error, Result};
pub use model::{Electron, Nuclear, PhysicalParams, RegisterState};
pub use protocol::ProtocolSpec;
pub use trajectory::{BatchResult, ShotModel, ShotRecord};
