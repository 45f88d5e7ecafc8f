//! Simulation and calibration toolkit for a tunable-coupler CZ gate.
//!
//! The crate models a four-node superconducting circuit — two fixed-frequency
//! transmons joined by a double-transmon coupler (two coupler transmons whose
//! far ends are shunted by a shared Josephson junction in a flux-biased
//! loop). It provides:
//!
//! * exact charge-basis diagonalization of the circuit with a two-stage
//!   truncation ([`circuit_model`]),
//! * a reduced plus/minus-mode model with closed-form estimates
//!   ([`toy_model`]),
//! * ZZ-interaction scans and coupler design searches ([`zz_analysis`]),
//! * Slepian-style flux pulses and transmission-line distortion handling
//!   ([`pulse_shaping`]),
//! * time-domain propagators for the driven circuit ([`gate_dynamics`]),
//! * CZ calibration loops: amplitude, pulse-shape and virtual-Z phases
//!   ([`calibration_optim`]),
//! * Kraus channels for decoherence budgets ([`noise_channels`]),
//! * Clifford randomized benchmarking with leakage ([`benchmarking`]),
//! * Pauli-transfer-matrix process tomography ([`tomography`]).
//!
//! Heavy scans and ensembles run data-parallel when the default `parallel`
//! feature is enabled; disabling it yields a sequential build with identical
//! results.

pub mod benchmarking;
pub mod calibration_optim;
pub mod circuit_model;
pub mod gate_dynamics;
pub mod linalg;
pub mod noise_channels;
pub mod par;
pub mod pulse_shaping;
pub mod tomography;
pub mod toy_model;
pub mod units;
pub mod zz_analysis;

#[cfg(test)]
pub(crate) mod test_fixtures;

mod error;
pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
