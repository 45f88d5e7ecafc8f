//! Physical constants and unit conversions.
//!
//! Internal conventions used across the crate:
//!
//! * energies are quoted as frequencies in GHz (E/h),
//! * times are in ns, so `phase = 2π · E[GHz] · t[ns]`,
//! * capacitances are in fF, currents in nA,
//! * external flux is dimensionless, `phi_ex / 2π` in units of the flux
//!   quantum.

/// Planck constant, J·s.
pub const PLANCK_H: f64 = 6.626_070_15e-34;

/// Elementary charge, C.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;

/// Superconducting flux quantum Φ₀ = h / (2e), Wb.
pub const FLUX_QUANTUM: f64 = PLANCK_H / (2.0 * ELEMENTARY_CHARGE);

/// Josephson energy (GHz) of a junction with critical current `ic_na` (nA):
/// `E_J/h = Φ₀ I_c / (2π h)`.
///
/// The conversion factor is ≈ 0.4967 GHz per nA.
pub fn ej_ghz_from_ic_na(ic_na: f64) -> f64 {
    FLUX_QUANTUM * (ic_na * 1e-9) / (2.0 * std::f64::consts::PI) / PLANCK_H / 1e9
}

/// Charging-energy coefficient matrix entry (GHz) from an inverse-capacitance
/// entry given in 1/fF: `e²/(2h) · (C⁻¹)ᵢⱼ`.
///
/// With this normalization the kinetic term of the circuit Hamiltonian reads
/// `Σᵢ 4 Ecᵢᵢ n̂ᵢ² + Σᵢ<ⱼ 8 Ecᵢⱼ n̂ᵢ n̂ⱼ`. For a lone island of 100 fF the
/// diagonal entry is ≈ 0.194 GHz.
pub fn charging_ghz_from_inv_ff(c_inv_per_ff: f64) -> f64 {
    ELEMENTARY_CHARGE * ELEMENTARY_CHARGE / (2.0 * PLANCK_H) * (c_inv_per_ff / 1e-15) / 1e9
}
