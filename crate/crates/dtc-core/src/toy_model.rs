//! Reduced two-mode picture of the coupler and its qubit couplings.
//!
//! In the symmetric-coupler limit (`C33 ≈ C44`, `E_J3 ≈ E_J4`) the two
//! coupler nodes reduce to a plus mode `φ_p = (φ₃+φ₄)/2` — a fixed-frequency
//! transmon — and a minus mode `φ_m = (φ₃−φ₄)/2` — a flux-tunable,
//! capacitively shunted well with potential
//!
//! ```text
//! V_m(φ) = −2E_J cos φ − α E_J cos(2φ + φ_ex),      α = E_J5 / E_J.
//! ```
//!
//! Each data qubit couples to both modes through the same coupling
//! capacitor, with the sign of the Q2–minus-mode coupling structurally
//! negative. Second-order perturbation theory then gives the effective
//! qubit–qubit exchange
//!
//! ```text
//! g_eff = (g_1p g_2p / 2)(1/Δ_1p + 1/Δ_2p) − (g_1m g_2m / 2)(1/Δ_1m + 1/Δ_2m),
//! ```
//!
//! which crosses zero where the two mode contributions cancel — the idle
//! bias. At that bias the shared junction drops out of the potential
//! curvature, giving the closed-form estimate implemented by
//! [`idle_point_estimate`].

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex;

use crate::circuit_model::CircuitParams;
use crate::linalg::{eigh, CMat};
use crate::units::charging_ghz_from_inv_ff;
use crate::{Error, Result};

/// Harmonic-oscillator basis size for the 1-D mode wells.
const WELL_BASIS: usize = 40;

/// Relative asymmetry of the averaged parameter pairs above which the
/// symmetric reduction is considered unreliable.
pub const ASYMMETRY_TOLERANCE: f64 = 0.10;

/// One-dimensional plus/minus-mode wells of the coupler.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeWells {
    /// Symmetrized single-junction Josephson energy E_J (GHz).
    ej: f64,
    /// Shared-junction ratio α = E_J5/E_J.
    alpha: f64,
    /// Plus-mode charging energy (GHz).
    ec_p: f64,
    /// Minus-mode charging energy (GHz).
    ec_m: f64,
}

impl ModeWells {
    /// Build the wells from the circuit parameters (symmetrizing the
    /// coupler pair).
    pub fn from_circuit(params: &CircuitParams) -> Result<Self> {
        let caps = toy_caps(params)?;
        Ok(Self::from_caps(&caps))
    }

    fn from_caps(caps: &ToyCaps) -> Self {
        ModeWells {
            ej: caps.ej,
            alpha: caps.alpha,
            ec_p: charging_ghz_from_inv_ff(1.0 / caps.ct_p),
            ec_m: charging_ghz_from_inv_ff(1.0 / caps.ct_m),
        }
    }

    /// Lowest `n` plus-mode levels (GHz, absolute).
    pub fn p_levels(&self, n: usize) -> Vec<f64> {
        let ej2 = 2.0 * self.ej;
        well_levels(self.ec_p, |p| -ej2 * p.cos(), ej2, 0.0, n)
    }

    /// Lowest `n` minus-mode levels at reduced flux `flux` (GHz, absolute).
    pub fn m_levels(&self, flux: f64, n: usize) -> Vec<f64> {
        let phi_ex = 2.0 * PI * flux;
        let ej2 = 2.0 * self.ej;
        let aej = self.alpha * self.ej;
        let pm = m_well_minimum(self.alpha, flux).expect("validated junction ratio");
        // The basis scale only affects convergence, not the spectrum, so a
        // floor keeps the quartic-well edge (vanishing curvature) usable.
        let curvature =
            (ej2 * pm.cos() + 4.0 * aej * (2.0 * pm + phi_ex).cos()).max(0.05 * ej2);
        well_levels(
            self.ec_m,
            |p| -ej2 * p.cos() - aej * (2.0 * p + phi_ex).cos(),
            curvature,
            pm,
            n,
        )
    }

    /// Lowest `n` levels of both modes: `(plus, minus)`.
    pub fn mode_levels(&self, flux: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
        (self.p_levels(n), self.m_levels(flux, n))
    }

    /// Plus-mode transition frequency ω_p (GHz).
    pub fn mode_freq_p(&self) -> f64 {
        let l = self.p_levels(2);
        l[1] - l[0]
    }

    /// Minus-mode transition frequency ω_m at reduced flux `flux` (GHz).
    pub fn mode_freq_m(&self, flux: f64) -> f64 {
        let l = self.m_levels(flux, 2);
        l[1] - l[0]
    }
}

/// Location of the minus-well potential minimum (radians) at reduced flux
/// `flux`: the root of `sin φ + α sin(2φ + φ_ex) = 0` in the global well.
pub fn m_well_minimum(alpha: f64, flux: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::config(format!(
            "junction ratio must satisfy 0 ≤ α < 1, got {alpha}"
        )));
    }
    let phi_ex = 2.0 * PI * flux;
    let f = |p: f64| p.sin() + alpha * (2.0 * p + phi_ex).sin();
    // Coarse scan for the global well (E_J scales out of the location).
    let mut best = 0.0;
    let mut best_v = f64::INFINITY;
    let n = 720;
    let dx = 2.0 * PI / n as f64;
    for i in 0..=n {
        let p = -PI + dx * i as f64;
        let v = -2.0 * p.cos() - alpha * (2.0 * p + phi_ex).cos();
        if v < best_v {
            best_v = v;
            best = p;
        }
    }
    // Bracket the sign change of the stationarity condition around the
    // coarse minimum and bisect (robust even at quartic minima, where the
    // derivative of the condition vanishes).
    let candidates: Vec<f64> = (-2..=2).map(|j| best + j as f64 * dx).collect();
    let mut bracket = None;
    for w in candidates.windows(2) {
        let (fa, fb) = (f(w[0]), f(w[1]));
        if fa == 0.0 {
            return Ok(w[0]);
        }
        if fa < 0.0 && fb >= 0.0 {
            bracket = Some((w[0], w[1]));
            break;
        }
    }
    let (mut a, mut b) = bracket.ok_or_else(|| {
        Error::numerical("minus-well minimum search found no sign change".to_string())
    })?;
    for _ in 0..120 {
        let mid = 0.5 * (a + b);
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// Levels of `H = 4 Ec n̂² + V(φ)` expanded around the well minimum in a
/// harmonic-oscillator basis.
///
/// The quadrature scale is matched to the local curvature
/// (`c = (2Ec/V'')^{1/4}`); the potential is applied pointwise on the
/// eigenvalues of the position operator.
fn well_levels(ec: f64, v: impl Fn(f64) -> f64, curvature: f64, phi_min: f64, n_out: usize) -> Vec<f64> {
    let nb = WELL_BASIS;
    let c = (2.0 * ec / curvature).powf(0.25);
    // Kinetic term 4Ec n̂² = (Ec/c²)(2n̂+1 − â†² − â²).
    let mut ke = CMat::zeros(nb, nb);
    for k in 0..nb {
        ke[(k, k)] = Complex::new((ec / (c * c)) * (2.0 * k as f64 + 1.0), 0.0);
    }
    for k in 0..nb - 2 {
        let val = -(ec / (c * c)) * (((k + 1) * (k + 2)) as f64).sqrt();
        ke[(k, k + 2)] = Complex::new(val, 0.0);
        ke[(k + 2, k)] = Complex::new(val, 0.0);
    }
    // Position operator â+â†, diagonalized to evaluate V pointwise.
    let mut x = CMat::zeros(nb, nb);
    for k in 0..nb - 1 {
        let val = ((k + 1) as f64).sqrt();
        x[(k, k + 1)] = Complex::new(val, 0.0);
        x[(k + 1, k)] = Complex::new(val, 0.0);
    }
    let (xv, xu) = eigh(&x);
    let vdiag = CMat::from_fn(nb, nb, |r, col| {
        if r == col {
            Complex::new(v(phi_min + c * xv[r]), 0.0)
        } else {
            Complex::new(0.0, 0.0)
        }
    });
    let h = &ke + &xu * vdiag * xu.adjoint();
    let (vals, _) = eigh(&h);
    vals.iter().take(n_out).copied().collect()
}

/// Symmetrized capacitances and junction energies backing the reduction.
struct ToyCaps {
    cq: f64,
    cg: f64,
    cc: f64,
    c34: f64,
    /// Symmetrized coupler-junction energy E_J (GHz).
    ej: f64,
    /// Data-qubit junction energies (GHz).
    ej_q: [f64; 2],
    alpha: f64,
    ct_q: f64,
    ct_p: f64,
    ct_m: f64,
    ct_gp: f64,
    ct_gm: f64,
    asymmetry: f64,
}

fn toy_caps(params: &CircuitParams) -> Result<ToyCaps> {
    params.validate()?;
    let c = &params.cap_matrix;
    let ej = params.josephson_energies_ghz();
    let rel = |a: f64, b: f64| (a - b).abs() / (0.5 * (a + b));
    let asymmetry = [
        rel(c[0][0], c[1][1]),
        rel(c[0][2], c[1][3]),
        rel(c[2][2], c[3][3]),
        rel(ej[2], ej[3]),
    ]
    .into_iter()
    .fold(0.0, f64::max);

    let cq = 0.5 * (c[0][0] + c[1][1]);
    let cg = 0.5 * (c[0][2] + c[1][3]);
    let cc = 0.5 * (c[2][2] + c[3][3]);
    let c34 = c[2][3];
    let ej_c = 0.5 * (ej[2] + ej[3]);
    let alpha = ej[4] / ej_c;
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::config(format!(
            "junction ratio must satisfy 0 < α < 1 for the reduced model, got {alpha:.4}"
        )));
    }

    // Capacitance matrix in (q1, q2, p, m) coordinates; negligible stray
    // capacitances (C14, C23, C12) are dropped.
    let mut cm = DMatrix::<f64>::zeros(4, 4);
    cm[(0, 0)] = cq + cg;
    cm[(1, 1)] = cq + cg;
    cm[(2, 2)] = 2.0 * (cc + cg);
    cm[(3, 3)] = 2.0 * (cc + cg + 2.0 * c34);
    cm[(0, 2)] = -cg;
    cm[(2, 0)] = -cg;
    cm[(0, 3)] = -cg;
    cm[(3, 0)] = -cg;
    cm[(1, 2)] = -cg;
    cm[(2, 1)] = -cg;
    cm[(1, 3)] = cg;
    cm[(3, 1)] = cg;
    let inv = cm
        .try_inverse()
        .ok_or_else(|| Error::config("singular reduced capacitance matrix"))?;

    Ok(ToyCaps {
        cq,
        cg,
        cc,
        c34,
        ej: ej_c,
        ej_q: [ej[0], ej[1]],
        alpha,
        ct_q: 1.0 / inv[(0, 0)],
        ct_p: 1.0 / inv[(2, 2)],
        ct_m: 1.0 / inv[(3, 3)],
        ct_gp: 1.0 / inv[(0, 2)],
        ct_gm: 1.0 / inv[(0, 3)],
        asymmetry,
    })
}

/// Parameters of the reduced four-mode model.
///
/// Couplings are stored as magnitudes; the Q2–minus-mode coupling enters
/// the Hamiltonian with a structural minus sign, which
/// [`effective_coupling`] accounts for via the relative sign of the two
/// mode contributions.
#[derive(Debug, Clone)]
pub struct ToyParams {
    /// Qubit transition frequencies ω₁, ω₂ (GHz) from the 1-D qubit wells.
    pub qubit_freqs: [f64; 2],
    /// Qubit anharmonicities (GHz): the ladder second difference
    /// `E₂ − 2E₁ + E₀` (twice the quartic-term coefficient of the
    /// normal-ordered oscillator expansion).
    pub anharmonicities: [f64; 2],
    /// Plus-mode frequency ω_p (GHz); flux-independent.
    pub mode_freq_p: f64,
    /// Couplings `[g_1p, g_2p, g_1m, g_2m]` (GHz) evaluated at the
    /// idle-point estimate; see [`ToyParams::couplings_at`] for other
    /// fluxes.
    pub couplings: [f64; 4],
    /// Effective qubit capacitance C̃_q (fF).
    pub eff_cap_q: f64,
    /// Effective plus-mode capacitance C̃_p (fF).
    pub eff_cap_p: f64,
    /// Effective minus-mode capacitance C̃_m (fF).
    pub eff_cap_m: f64,
    /// Effective qubit–plus-mode coupling capacitance C̃_gp (fF).
    pub eff_cap_gp: f64,
    /// Effective qubit–minus-mode coupling capacitance C̃_gm (fF).
    pub eff_cap_gm: f64,
    /// Shared-junction ratio α = E_J5/E_J.
    pub junction_ratio: f64,
    /// Largest relative deviation among the symmetrized parameter pairs;
    /// above [`ASYMMETRY_TOLERANCE`] the reduction is unreliable.
    pub asymmetry: f64,
    wells: ModeWells,
    /// Flux-independent capacitance prefactors of the coupling closed
    /// forms, for the plus and minus modes.
    coupling_prefactors: [f64; 2],
}

impl ToyParams {
    /// Minus-mode frequency ω_m at reduced flux `flux` (GHz).
    pub fn mode_freq_m(&self, flux: f64) -> f64 {
        self.wells.mode_freq_m(flux)
    }

    /// Couplings `[g_1p, g_2p, g_1m, g_2m]` (GHz) at reduced flux `flux`.
    pub fn couplings_at(&self, flux: f64) -> [f64; 4] {
        let [w1, w2] = self.qubit_freqs;
        let wp = self.mode_freq_p;
        let wm = self.mode_freq_m(flux);
        let [pp, pm] = self.coupling_prefactors;
        [
            (w1 * wp).sqrt() * pp,
            (w2 * wp).sqrt() * pp,
            (w1 * wm).sqrt() * pm,
            (w2 * wm).sqrt() * pm,
        ]
    }

    /// The 1-D wells backing the mode frequencies.
    pub fn wells(&self) -> &ModeWells {
        &self.wells
    }

    /// Check the documented invariants.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.junction_ratio) || self.junction_ratio == 0.0 {
            return Err(Error::config("junction ratio must satisfy 0 < α < 1"));
        }
        if self.couplings.iter().any(|g| *g < 0.0) {
            return Err(Error::config("couplings are stored as magnitudes (≥ 0)"));
        }
        Ok(())
    }
}

/// Derive the reduced-model parameters from the circuit parameters.
///
/// Asymmetric inputs are symmetrized by averaging (`C11/C22`, `C13/C24`,
/// `C33/C44`, `I_c3/I_c4`); the recorded [`ToyParams::asymmetry`] metric
/// keeps the approximation honest.
pub fn derive_toy_params(params: &CircuitParams) -> Result<ToyParams> {
    let caps = toy_caps(params)?;
    let wells = ModeWells::from_caps(&caps);
    let ec_q = charging_ghz_from_inv_ff(1.0 / caps.ct_q);

    let mut qubit_freqs = [0.0; 2];
    let mut anharmonicities = [0.0; 2];
    for (i, &ej) in caps.ej_q.iter().enumerate() {
        let levels = well_levels(ec_q, |p| -ej * p.cos(), ej, 0.0, 3);
        qubit_freqs[i] = levels[1] - levels[0];
        anharmonicities[i] = levels[2] - 2.0 * levels[1] + levels[0];
    }
    let mode_freq_p = wells.mode_freq_p();

    let pref_p = caps.cg / (2.0 * ((caps.cq + caps.cg) * (caps.cc + caps.cg)).sqrt());
    let pref_m =
        caps.cg / (2.0 * ((caps.cq + caps.cg) * (caps.cc + 2.0 * caps.c34 + caps.cg)).sqrt());

    let mut toy = ToyParams {
        qubit_freqs,
        anharmonicities,
        mode_freq_p,
        couplings: [0.0; 4],
        eff_cap_q: caps.ct_q,
        eff_cap_p: caps.ct_p,
        eff_cap_m: caps.ct_m,
        eff_cap_gp: caps.ct_gp,
        eff_cap_gm: caps.ct_gm,
        junction_ratio: caps.alpha,
        asymmetry: caps.asymmetry,
        wells,
        coupling_prefactors: [pref_p, pref_m],
    };
    let idle = idle_point_estimate(caps.alpha)?;
    toy.couplings = toy.couplings_at(idle);
    Ok(toy)
}

/// Effective qubit–qubit coupling with its dispersive-validity flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveCoupling {
    /// g_eff (GHz).
    pub value: f64,
    /// True when every qubit–mode detuning exceeds three times its
    /// coupling; outside this regime the perturbative value is indicative
    /// only.
    pub dispersive: bool,
}

/// Effective qubit–qubit coupling mediated by the two coupler modes at
/// reduced flux `flux`.
pub fn effective_coupling(toy: &ToyParams, flux: f64) -> Result<EffectiveCoupling> {
    toy.validate()?;
    let [w1, w2] = toy.qubit_freqs;
    let wp = toy.mode_freq_p;
    let wm = toy.mode_freq_m(flux);
    let g = toy.couplings_at(flux);
    let value = dispersive_coupling(w1, w2, wp, wm, g)?;
    let detunings = [w1 - wp, w2 - wp, w1 - wm, w2 - wm];
    let dispersive = detunings
        .iter()
        .zip(g.iter())
        .all(|(d, gi)| d.abs() > 3.0 * gi.abs());
    Ok(EffectiveCoupling { value, dispersive })
}

/// Second-order exchange between two qubits via two modes with couplings
/// `[g_1p, g_2p, g_1m, g_2m]` (minus-mode contribution structurally
/// negative).
pub fn dispersive_coupling(w1: f64, w2: f64, wp: f64, wm: f64, g: [f64; 4]) -> Result<f64> {
    let pairs = [
        (w1 - wp, "qubit 1 and the plus mode"),
        (w2 - wp, "qubit 2 and the plus mode"),
        (w1 - wm, "qubit 1 and the minus mode"),
        (w2 - wm, "qubit 2 and the minus mode"),
    ];
    for (d, name) in pairs {
        if d.abs() < 1e-9 {
            return Err(Error::numerical(format!("exact resonance between {name}")));
        }
    }
    let p_term = 0.5 * g[0] * g[1] * (1.0 / (w1 - wp) + 1.0 / (w2 - wp));
    let m_term = 0.5 * g[2] * g[3] * (1.0 / (w1 - wm) + 1.0 / (w2 - wm));
    Ok(p_term - m_term)
}

/// Closed-form idle-bias estimate from the junction ratio: the reduced flux
/// in (0, 0.5) at which the shared junction decouples from the potential
/// minimum (`2φ_m + φ_ex = π/2 + kπ` with `sin φ_m = ±α`).
pub fn idle_point_estimate(alpha: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::config(format!(
            "junction ratio must satisfy 0 ≤ α < 1, got {alpha}"
        )));
    }
    let r = 0.25 + alpha.asin() / PI;
    Ok(if r < 0.5 { r } else { 0.75 - alpha.asin() / PI })
}

/// Two-dimensional potential maps over a square (φ_p, φ_m) grid.
#[derive(Debug, Clone)]
pub struct PotentialSurface {
    /// Shared axis (radians) for both φ_p (rows) and φ_m (columns).
    pub grid: Vec<f64>,
    /// Full two-mode potential, offset to zero at its minimum (GHz).
    pub v_exact: Vec<Vec<f64>>,
    /// Separable approximation, offset to zero at its minimum (GHz).
    pub v_approx: Vec<Vec<f64>>,
    /// `v_exact − v_approx` after offsetting (GHz).
    pub difference: Vec<Vec<f64>>,
    /// Minimum location (φ_p*, φ_m*) of the full potential (radians).
    pub minimum: (f64, f64),
}

/// Compare the full coupler potential with its separable approximation at
/// reduced flux `flux` over `grid × grid`.
///
/// The grid must be sorted and cover at least [−π/2, π/2].
pub fn potential_surface(
    params: &CircuitParams,
    flux: f64,
    grid: &[f64],
) -> Result<PotentialSurface> {
    let caps = toy_caps(params)?;
    if grid.len() < 2 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("potential grid must be sorted and non-trivial"));
    }
    if grid[0] > -PI / 2.0 + 1e-9 || grid[grid.len() - 1] < PI / 2.0 - 1e-9 {
        return Err(Error::config("potential grid must cover [-π/2, π/2]"));
    }
    let phi_ex = 2.0 * PI * flux;
    let ej = caps.ej;
    let alpha = caps.alpha;
    let exact = |p: f64, m: f64| -2.0 * ej * p.cos() * m.cos() - alpha * ej * (2.0 * m + phi_ex).cos();
    let approx = |p: f64, m: f64| -2.0 * ej * (p.cos() + m.cos()) - alpha * ej * (2.0 * m + phi_ex).cos();

    let pm = m_well_minimum(alpha, flux)?;
    let exact_min = exact(0.0, pm);
    let approx_min = approx(0.0, pm);

    let mut v_exact = Vec::with_capacity(grid.len());
    let mut v_approx = Vec::with_capacity(grid.len());
    let mut difference = Vec::with_capacity(grid.len());
    for &p in grid {
        let mut re = Vec::with_capacity(grid.len());
        let mut ra = Vec::with_capacity(grid.len());
        let mut rd = Vec::with_capacity(grid.len());
        for &m in grid {
            let ve = exact(p, m) - exact_min;
            let va = approx(p, m) - approx_min;
            re.push(ve);
            ra.push(va);
            rd.push(ve - va);
        }
        v_exact.push(re);
        v_approx.push(ra);
        difference.push(rd);
    }
    Ok(PotentialSurface {
        grid: grid.to_vec(),
        v_exact,
        v_approx,
        difference,
        minimum: (0.0, pm),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn device_toy() -> ToyParams {
        derive_toy_params(&CircuitParams::default_device()).unwrap()
    }

    #[test]
    fn effective_capacitances_for_reference_device() {
        let toy = device_toy();
        assert_relative_eq!(toy.eff_cap_q, 97.289410, epsilon = 1e-4);
        assert_relative_eq!(toy.eff_cap_p, 227.452316, epsilon = 1e-4);
        assert_relative_eq!(toy.eff_cap_m, 234.372316, epsilon = 1e-4);
        assert_relative_eq!(toy.eff_cap_gp, 3859.7669, epsilon = 1e-2);
        assert_relative_eq!(toy.eff_cap_gm, 3977.1963, epsilon = 1e-2);
        assert!(toy.asymmetry < ASYMMETRY_TOLERANCE);
    }

    #[test]
    fn mode_frequencies_for_reference_device() {
        let toy = device_toy();
        assert_relative_eq!(toy.mode_freq_p, 5.595545, epsilon = 1e-5);
        assert_relative_eq!(toy.mode_freq_m(0.0), 6.540540, epsilon = 1e-5);
        assert_relative_eq!(toy.mode_freq_m(0.309), 5.467153, epsilon = 1e-5);
        assert_relative_eq!(toy.mode_freq_m(0.5), 4.303655, epsilon = 1e-5);
        assert_relative_eq!(toy.qubit_freqs[0], 4.337607, epsilon = 1e-5);
        assert_relative_eq!(toy.qubit_freqs[1], 4.818009, epsilon = 1e-5);
        assert_relative_eq!(toy.anharmonicities[0], -0.22393, epsilon = 2e-5);
        assert_relative_eq!(toy.anharmonicities[1], -0.22097, epsilon = 2e-5);
    }

    #[test]
    fn couplings_match_closed_forms() {
        let toy = device_toy();
        // Values at the idle estimate.
        assert_relative_eq!(toy.couplings[0], 0.134258, epsilon = 2e-6);
        assert_relative_eq!(toy.couplings[1], 0.141497, epsilon = 2e-6);
        assert_relative_eq!(toy.couplings[2], 0.129846, epsilon = 2e-6);
        assert_relative_eq!(toy.couplings[3], 0.136848, epsilon = 2e-6);
        // Couplings land in the designed 0.1–0.2 GHz window.
        for g in toy.couplings {
            assert!((0.1..0.2).contains(&g), "coupling {g} out of range");
        }
    }

    #[test]
    fn coupling_ratio_identity() {
        // g_1p/g_1m = √(ω_p/ω_m)·√((C_c+2C_34+C_g)/(C_c+C_g)), evaluated
        // from the raw capacitances independently of the prefactors.
        let toy = device_toy();
        let idle = idle_point_estimate(toy.junction_ratio).unwrap();
        let g = toy.couplings_at(idle);
        let lhs = g[0] / g[2];
        let cc: f64 = 0.5 * (110.27 + 106.36);
        let cg: f64 = 0.5 * (5.73 + 5.77);
        let rhs = (toy.mode_freq_p / toy.mode_freq_m(idle)).sqrt()
            * ((cc + 2.0 * 1.73 + cg) / (cc + cg)).sqrt();
        assert_relative_eq!(lhs, rhs, epsilon = 1e-9);
    }

    #[test]
    fn equal_modes_give_equal_couplings() {
        // With no mutual coupler capacitance and matched mode frequencies
        // the plus- and minus-coupling closed forms coincide.
        let mut params = CircuitParams::default_device();
        params.cap_matrix[2][3] = 0.0;
        params.cap_matrix[3][2] = 0.0;
        let toy = derive_toy_params(&params).unwrap();
        assert_relative_eq!(
            toy.coupling_prefactors[0],
            toy.coupling_prefactors[1],
            epsilon = 1e-12
        );
    }

    #[test]
    fn effective_coupling_near_idle_is_small() {
        let toy = device_toy();
        let g = effective_coupling(&toy, 0.309).unwrap();
        assert!(g.dispersive);
        // Frozen derived value; small compared to the ~20 MHz on-state
        // exchange scale.
        assert_relative_eq!(g.value * 1e3, 2.0830, epsilon = 5e-3);
        assert!(g.value.abs() < 5e-3);
    }

    #[test]
    fn effective_coupling_crosses_zero_near_the_idle_region() {
        let toy = device_toy();
        let lo = effective_coupling(&toy, 0.25).unwrap().value;
        let hi = effective_coupling(&toy, 0.309).unwrap().value;
        assert!(lo < 0.0 && hi > 0.0, "no sign change: {lo} vs {hi}");
        let mut a = 0.25;
        let mut b = 0.309;
        for _ in 0..60 {
            let mid = 0.5 * (a + b);
            let v = effective_coupling(&toy, mid).unwrap().value;
            if (v < 0.0) == (lo < 0.0) {
                a = mid;
            } else {
                b = mid;
            }
        }
        let zero = 0.5 * (a + b);
        assert!((zero - 0.295005).abs() < 1e-4, "crossing at {zero}");
    }

    #[test]
    fn dispersive_flag_false_near_mode_qubit_resonance() {
        let toy = device_toy();
        // The minus mode sweeps through the upper qubit near this flux.
        let g = effective_coupling(&toy, 0.40).unwrap();
        assert!(!g.dispersive);
    }

    #[test]
    fn minus_mode_only_term_vanishes_with_zero_plus_couplings() {
        let v = dispersive_coupling(4.3, 4.8, 5.6, 5.4, [0.0, 0.0, 0.1, 0.1]).unwrap();
        let m_only = -0.5 * 0.1 * 0.1 * (1.0 / (4.3 - 5.4) + 1.0 / (4.8 - 5.4));
        assert_relative_eq!(v, m_only, epsilon = 1e-15);
    }

    #[test]
    fn sweeping_minus_mode_through_plus_mode_flips_the_sign() {
        // Equal coupling magnitudes: the exchange must cross zero as ω_m
        // passes ω_p.
        let g = [0.12, 0.12, 0.12, 0.12];
        let before = dispersive_coupling(4.3, 4.8, 5.6, 5.9, g).unwrap();
        let after = dispersive_coupling(4.3, 4.8, 5.6, 5.3, g).unwrap();
        assert!(before.signum() != after.signum());
        let at = dispersive_coupling(4.3, 4.8, 5.6, 5.6 + 1e-7, g).unwrap();
        assert!(at.abs() < 1e-4);
    }

    #[test]
    fn exact_resonance_is_an_error() {
        let err = dispersive_coupling(4.3, 5.6, 5.6, 5.0, [0.1; 4]).unwrap_err();
        assert!(err.to_string().contains("qubit 2 and the plus mode"));
    }

    #[test]
    fn idle_estimate_reference_points() {
        assert_relative_eq!(idle_point_estimate(0.0).unwrap(), 0.25, epsilon = 1e-15);
        assert_relative_eq!(
            idle_point_estimate(0.216330).unwrap(),
            0.319409,
            epsilon = 1e-6
        );
        assert!(idle_point_estimate(1.0).is_err());
        assert!(idle_point_estimate(-0.1).is_err());
    }

    #[test]
    fn idle_estimate_is_an_exact_stationary_decoupling_point() {
        for alpha in [0.0f64, 0.05, 0.216330, 0.4, 0.6, 0.8] {
            let r = idle_point_estimate(alpha).unwrap();
            assert!((0.0..0.5).contains(&r), "α={alpha}: estimate {r}");
            // The minus-well angle associated with the returned branch.
            let pm = if 0.25 + alpha.asin() / PI < 0.5 {
                -alpha.asin()
            } else {
                alpha.asin()
            };
            let phi_ex = 2.0 * PI * r;
            let residual = pm.sin() + alpha * (2.0 * pm + phi_ex).sin();
            assert!(residual.abs() < 1e-12, "α={alpha}: residual {residual:.2e}");
            // Junction decoupling at the stationary point.
            assert!((2.0 * pm + phi_ex).cos().abs() < 1e-8, "α={alpha}");
            // Below the double-well regime the stationary point is also the
            // global well minimum.
            if alpha <= 0.5 {
                let found = m_well_minimum(alpha, r).unwrap();
                assert!((found - pm).abs() < 1e-9, "α={alpha}: {found} vs {pm}");
            }
        }
    }

    #[test]
    fn minimum_cosine_bound_holds() {
        // cos φ_m ≥ √(1−α²) at every constrained minimum.
        for ai in 0..=10 {
            let alpha = 0.05 * ai as f64;
            let bound = (1.0 - alpha * alpha).sqrt();
            for fi in 0..=10 {
                let flux = 0.05 * fi as f64;
                let pm = m_well_minimum(alpha, flux).unwrap();
                assert!(
                    pm.cos() >= bound - 1e-9,
                    "α={alpha} flux={flux}: cos={} bound={bound}",
                    pm.cos()
                );
            }
        }
    }

    #[test]
    fn potential_difference_closed_form_at_zero_junction_ratio() {
        // With a vanishing shared junction the offset difference reduces to
        // −2E_J(cos φ_p cos φ_m − cos φ_p − cos φ_m + 1).
        let mut params = CircuitParams::default_device();
        params.critical_currents[4] = 1e-9;
        let ej = 0.5
            * (params.josephson_energies_ghz()[2] + params.josephson_energies_ghz()[3]);
        let grid: Vec<f64> = (0..41).map(|i| -PI / 2.0 + PI * i as f64 / 40.0).collect();
        let s = potential_surface(&params, 0.3, &grid).unwrap();
        for (i, &p) in grid.iter().enumerate() {
            for (j, &m) in grid.iter().enumerate() {
                let want = -2.0 * ej * (p.cos() * m.cos() - p.cos() - m.cos() + 1.0);
                assert_relative_eq!(s.difference[i][j], want, epsilon = 1e-6);
            }
        }
        assert_relative_eq!(s.difference[20][20], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn potential_minimum_satisfies_the_stationarity_condition() {
        let params = CircuitParams::default_device();
        let toy = derive_toy_params(&params).unwrap();
        let idle = idle_point_estimate(toy.junction_ratio).unwrap();
        let grid: Vec<f64> = (0..61).map(|i| -1.6 + 3.2 * i as f64 / 60.0).collect();
        let s = potential_surface(&params, idle, &grid).unwrap();
        let (pp, pm) = s.minimum;
        assert_eq!(pp, 0.0);
        let phi_ex = 2.0 * PI * idle;
        let residual = pm.sin() + toy.junction_ratio * (2.0 * pm + phi_ex).sin();
        assert!(residual.abs() < 1e-8);
        // The grid minimum of the exact surface is (near) zero and close to
        // the analytic minimum.
        let grid_min = s
            .v_exact
            .iter()
            .flatten()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(grid_min.abs() < 1e-3, "grid minimum {grid_min}");
        // The difference map stays small near the joint minimum.
        let i0 = grid.iter().position(|&g| (g - 0.0).abs() < 0.03).unwrap();
        let j0 = grid
            .iter()
            .position(|&g| (g - pm).abs() < 0.03)
            .unwrap();
        assert!(s.difference[i0][j0].abs() < 0.05 * toy.junction_ratio.max(0.05));
    }

    #[test]
    fn potential_grid_preconditions() {
        let params = CircuitParams::default_device();
        let too_small: Vec<f64> = (0..11).map(|i| -0.5 + 0.1 * i as f64).collect();
        assert!(potential_surface(&params, 0.3, &too_small).is_err());
        assert!(potential_surface(&params, 0.3, &[0.0]).is_err());
    }
}
