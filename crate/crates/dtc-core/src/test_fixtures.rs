//! Shared, lazily built test fixtures for the expensive reference-device
//! operators, so each test binary pays for construction and subspace
//! projection once rather than once per module.

use std::sync::OnceLock;

use crate::circuit_model::{
    build_hamiltonian, BasisConfig, CircuitParams, HamiltonianOperator,
};

/// Full two-stage operator of the reference device at default cutoffs.
pub(crate) fn default_full_operator() -> &'static HamiltonianOperator {
    static OP: OnceLock<HamiltonianOperator> = OnceLock::new();
    OP.get_or_init(|| {
        build_hamiltonian(&CircuitParams::default_device(), &BasisConfig::default()).unwrap()
    })
}

/// The full operator compressed onto an anchored subspace spanning the scan
/// window [0.25, 0.5]; reproduces the tracked low spectrum to well below
/// 1 Hz while cutting eigensolve cost by roughly an order of magnitude.
pub(crate) fn default_reduced_operator() -> &'static HamiltonianOperator {
    static OP: OnceLock<HamiltonianOperator> = OnceLock::new();
    OP.get_or_init(|| {
        let anchors: Vec<f64> = (0..4).map(|i| 0.25 + i as f64 * (0.25 / 3.0)).collect();
        default_full_operator()
            .project_onto_anchors(&anchors, 60)
            .unwrap()
    })
}
