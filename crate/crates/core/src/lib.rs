//! Closed-form hybrid TDoA/FDoA/AoA localization for distributed mmWave
//! radio heads, with scatterer mapping, Cramér-Rao bounds and
//! neural-network-assisted weighted least squares.

// `!(x > 0.0)` style guards are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod crlb;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod mapping;
pub mod nn;
pub mod noise;
pub mod wls;

pub use crlb::{crlb_joint, jacobian_b1, verify_efficiency_identity, CrlbResult};
pub use error::{Error, Result};
pub use geometry::{Scenario, Vec3};
pub use harness::{monte_carlo, EstimatorKind, MetricsReport, Models, RunConfig};
pub use noise::{MappingMeasurement, MeasurementSet, NoiseKind, NoiseModel};
pub use wls::{estimate_joint, JointEstimate};
