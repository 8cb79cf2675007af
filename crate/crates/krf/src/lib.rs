//! Ground-class prediction ahead of an EPB shield.
//!
//! The library fuses two prediction channels: a spatial extrapolation of the
//! previously predicted ground (kriging over chainage, calibrated by a
//! semivariogram model) and a multi-output random-forest regression on the
//! live operating parameters. The two are combined per face-thickness
//! component with weights inversely proportional to their variances.
//!
//! Modules follow the pipeline: [`preprocess`] cleans telemetry and encodes
//! ground truth, [`variogram`] and [`kriging`] carry the spatial channel,
//! [`forest`] the operating-parameter channel, [`fusion`] runs the rolling
//! combination over a chainage-ordered stream, [`eval`] scores predictions,
//! and [`datagen`] produces seeded synthetic tunnels for end-to-end checks.
//! The `krf` binary in [`cli`] wires these into reproducible commands.

// the 6.28 m cutterhead diameter litters the code and trips the TAU lint
#![allow(clippy::approx_constant)]

pub mod cli;
pub mod config;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod forest;
pub mod fusion;
pub mod kriging;
mod linalg;
pub mod preprocess;
pub mod table;
pub mod variogram;

pub use error::{KrfError, Result};
pub use preprocess::{BqClass, GroundVector, OperatingRecord};
