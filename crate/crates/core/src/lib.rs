//! Cooperative maximum-likelihood target localization for networks of
//! monostatic MIMO-OTFS ISAC base stations.
//!
//! The crate is organised bottom-up:
//!
//! - [`otfs`]: delay-Doppler / time-frequency transforms, pulses, the
//!   cross-ambiguity function and the effective channel operator, with a
//!   name-keyed registry of interchangeable channel backends.
//! - [`scene`]: base-station geometry, radar link budget, sector
//!   beamforming and received-signal synthesis.
//! - [`estimator`]: closed-form channel coefficient, the reduced
//!   single-BS likelihood, the coarse per-BS search and fused radar maps.
//! - [`crlb`]: per-BS Fisher information, nuisance reduction, Jacobian
//!   chain to the common frame and the position error bound.
//! - [`harness`]: seeded Monte Carlo RMSE experiments.

pub mod crlb;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod otfs;
pub mod rng;
pub mod scene;

pub use error::{Error, Result};

pub use num_complex::Complex64;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
