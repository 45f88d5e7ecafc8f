//! ZZ interaction: definition, flux scans, idle-point search, and the
//! staged parameter search over coupler designs.
//!
//! The ZZ rate is the conditional frequency shift of one data qubit when the
//! other is excited,
//!
//! ```text
//! ζ = E(|1100⟩) + E(|0000⟩) − E(|1000⟩) − E(|0100⟩),
//! ```
//!
//! evaluated on the adiabatically tracked eigenenergies of the full circuit.
//! ζ is carried signed (it is negative at both of the reference device's
//! operating points) and reported in MHz; on–off ratios use magnitudes.
//!
//! Because the computational states hybridize with coupler states at large
//! flux, every evaluation anchors a tracked walk at the operator's reference
//! flux — where the states are cleanly identifiable — and follows eigenvector
//! continuity out to the requested flux in steps small enough to keep the
//! overlap between neighbouring points unambiguous. Long walks are first
//! projected onto an anchored low-energy subspace
//! ([`HamiltonianOperator::project_onto_anchors`]), which reproduces the
//! tracked levels to well below the kHz scale of interest while making each
//! step two orders of magnitude cheaper.
//!
//! The parameter search mirrors a two-stage design procedure: map ζ over
//! coupler capacitance × coupler junction energy at a fixed junction ratio,
//! pick the capacitance, then map junction energy × junction ratio at that
//! capacitance. Cells are screened against a pair of targets (idle-point
//! residual ZZ tolerated, on-point ZZ required) and ranked.

use crate::circuit_model::{
    build_hamiltonian, eigensolve, label_states, spectrum_scan_operator, BasisConfig,
    CircuitParams, EnergySpectrum, HamiltonianOperator, StateLabel, SCAN_LEVELS,
};
use crate::par::map_slice;
use crate::units::ej_ghz_from_ic_na;
use crate::{Error, Result};

/// Maximum flux step of a tracked walk. Small enough that eigenvector
/// overlap between neighbouring points stays far above the tracking
/// threshold even across the avoided crossings at large flux.
pub const WALK_STEP: f64 = 0.002;

/// Minimum best-overlap with a bare product state demanded of all four
/// computational labels at the anchor point of a walk. Far stricter than
/// the generic ambiguity flag: the anchor defines state identity for the
/// entire walk.
pub const ANCHOR_MIN_OVERLAP: f64 = 0.8;

/// Walks at least this long trigger the anchored-subspace projection.
const PROJECT_MIN_POINTS: usize = 12;

/// Operators at or below this dimension are solved directly; the projection
/// would not pay for itself.
const PROJECT_DIM_FLOOR: usize = 300;

/// Anchors and levels per anchor for high-fidelity walks (reproduces the
/// tracked levels to sub-Hz accuracy on the reference device).
const PROJECT_ANCHORS: usize = 4;
const PROJECT_LEVELS: usize = 60;

/// Idle-point refinement tolerance in reduced flux.
const IDLE_REFINE_TOL: f64 = 1e-4;

/// Flux window walked when screening parameter-search cells.
const SEARCH_LO: f64 = 0.25;
const SEARCH_HI: f64 = 0.5;

/// Retained coupler levels for parameter-search screening. Smaller than the
/// default basis because the search compares designs rather than pinning a
/// chosen design's numbers: on the reference device this setting reproduces
/// the idle-point ζ to better than 0.2 kHz and the operating-point ζ to a
/// few percent, at two thirds of the assembled dimension. Fewer than
/// sixteen kept levels is not safe — the operating-point interaction rides
/// on coupler states near the truncation edge and collapses when they are
/// dropped.
const SEARCH_KEPT_COUPLER: usize = 16;

/// ζ in MHz from the four computational energies in GHz.
///
/// Invariant under adding any constant to all four energies, so it does not
/// matter whether the inputs are absolute or ground-offset.
pub fn zeta_from_energies(e00_ghz: f64, e01_ghz: f64, e10_ghz: f64, e11_ghz: f64) -> f64 {
    ((e11_ghz - e10_ghz) - (e01_ghz - e00_ghz)) * 1e3
}

/// ζ (MHz, signed) at a single flux, from a freshly built operator.
pub fn zz_at(params: &CircuitParams, basis: &BasisConfig, flux: f64) -> Result<f64> {
    let h = build_hamiltonian(params, basis)?;
    zz_at_operator(&h, flux)
}

/// [`zz_at`] on an already-built operator.
pub fn zz_at_operator(h: &HamiltonianOperator, flux: f64) -> Result<f64> {
    if !flux.is_finite() {
        return Err(Error::config("flux must be finite"));
    }
    Ok(tracked_zeta(h, &[flux])?[0])
}

/// ZZ interaction over a flux grid.
///
/// `zeta_mhz[i]` is the signed ζ at `flux_points[i]`; `idle_point` /
/// `max_point` are the grid points minimizing / maximizing |ζ|, and
/// `onoff_ratio = |ζ(max_point)| / |ζ(idle_point)|`.
#[derive(Debug, Clone)]
pub struct ZZCurve {
    pub flux_points: Vec<f64>,
    pub zeta_mhz: Vec<f64>,
    pub idle_point: f64,
    pub max_point: f64,
    pub onoff_ratio: f64,
}

/// Default scan grid: 201 points over [0.25, 0.50]. Finer resolution near
/// the idle point comes from [`find_idle_point`], not denser global grids —
/// ζ spans four decades over this window.
pub fn default_scan_grid() -> Vec<f64> {
    let n = 201;
    (0..n)
        .map(|i| 0.25 + 0.25 * (i as f64) / ((n - 1) as f64))
        .collect()
}

/// ζ over `grid` (strictly increasing, within [0, 0.5]) with idle/max
/// points and the on–off ratio.
pub fn zz_scan(params: &CircuitParams, basis: &BasisConfig, grid: &[f64]) -> Result<ZZCurve> {
    let h = build_hamiltonian(params, basis)?;
    zz_scan_operator(&h, grid)
}

/// [`zz_scan`] on an already-built operator.
pub fn zz_scan_operator(h: &HamiltonianOperator, grid: &[f64]) -> Result<ZZCurve> {
    if grid.is_empty() {
        return Err(Error::config("flux grid must not be empty"));
    }
    if grid.iter().any(|f| !f.is_finite()) {
        return Err(Error::config("flux grid must be finite"));
    }
    if !grid.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::config("flux grid must be strictly increasing"));
    }
    if grid[0] < -1e-12 || *grid.last().unwrap() > 0.5 + 1e-12 {
        return Err(Error::config("flux grid must lie within [0, 0.5]"));
    }
    let zeta_mhz = tracked_zeta(h, grid)?;
    let mut i_min = 0;
    let mut i_max = 0;
    for (i, z) in zeta_mhz.iter().enumerate() {
        if z.abs() < zeta_mhz[i_min].abs() {
            i_min = i;
        }
        if z.abs() > zeta_mhz[i_max].abs() {
            i_max = i;
        }
    }
    let min_abs = zeta_mhz[i_min].abs();
    let max_abs = zeta_mhz[i_max].abs();
    let onoff_ratio = if max_abs == 0.0 {
        1.0 // identically zero curve
    } else if min_abs == 0.0 {
        f64::INFINITY
    } else {
        max_abs / min_abs
    };
    Ok(ZZCurve {
        flux_points: grid.to_vec(),
        zeta_mhz,
        idle_point: grid[i_min],
        max_point: grid[i_max],
        onoff_ratio,
    })
}

/// Locate the flux minimizing |ζ| inside `bracket`, refined to 1e−4 in
/// reduced flux.
pub fn find_idle_point(
    params: &CircuitParams,
    basis: &BasisConfig,
    bracket: (f64, f64),
) -> Result<f64> {
    let h = build_hamiltonian(params, basis)?;
    find_idle_point_operator(&h, bracket, IDLE_REFINE_TOL)
}

/// [`find_idle_point`] on an already-built operator with an explicit
/// refinement tolerance (reduced flux).
///
/// The bracket is first walked at [`WALK_STEP`] resolution; |ζ| must attain
/// its minimum strictly inside the bracket, otherwise the search reports an
/// error rather than returning an endpoint. Golden-section refinement then
/// shrinks the surrounding interval below `tol`.
pub fn find_idle_point_operator(
    h: &HamiltonianOperator,
    bracket: (f64, f64),
    tol: f64,
) -> Result<f64> {
    let (lo, hi) = bracket;
    if !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(Error::config("bracket must satisfy lo < hi"));
    }
    if !(tol > 0.0 && tol <= 0.01) {
        return Err(Error::config("refinement tolerance must lie in (0, 0.01]"));
    }

    // One projection shared between the coarse walk and the refinement.
    let span_lo = lo.min(h.reference_flux);
    let span_hi = hi.max(h.reference_flux);
    let approx_points = ((span_hi - span_lo) / WALK_STEP).ceil() as usize + 1;
    let holder;
    let op = if approx_points >= PROJECT_MIN_POINTS
        && h.dimension > PROJECT_DIM_FLOOR
        && !h.is_reduced()
    {
        holder = h.project_onto_anchors(
            &anchor_grid(span_lo, span_hi, PROJECT_ANCHORS),
            PROJECT_LEVELS.min(h.dimension),
        )?;
        &holder
    } else {
        h
    };

    let coarse = linstep(lo, hi, WALK_STEP);
    let zetas = tracked_zeta(op, &coarse)?;
    let mut i_min = 0;
    for (i, z) in zetas.iter().enumerate() {
        if z.abs() < zetas[i_min].abs() {
            i_min = i;
        }
    }
    if i_min == 0 || i_min + 1 == coarse.len() {
        return Err(Error::numerical(format!(
            "|zeta| has no interior minimum in [{lo:.4}, {hi:.4}]: it keeps decreasing toward \
             the bracket edge at {:.4}",
            coarse[i_min]
        )));
    }

    // Golden-section on |ζ| between the coarse neighbours of the minimum.
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (coarse[i_min - 1], coarse[i_min + 1]);
    let mut c = b - golden * (b - a);
    let mut d = a + golden * (b - a);
    let mut fc = zeta_clean_point(op, c)?.abs();
    let mut fd = zeta_clean_point(op, d)?.abs();
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - golden * (b - a);
            fc = zeta_clean_point(op, c)?.abs();
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + golden * (b - a);
            fd = zeta_clean_point(op, d)?.abs();
        }
    }
    Ok(0.5 * (a + b))
}

// ---------------------------------------------------------------------------
// Tracked evaluation internals
// ---------------------------------------------------------------------------

/// ζ (MHz) at every target flux, by tracked walks anchored at the
/// operator's reference flux. `targets` must be strictly increasing.
fn tracked_zeta(h: &HamiltonianOperator, targets: &[f64]) -> Result<Vec<f64>> {
    assert!(!targets.is_empty());
    debug_assert!(targets.windows(2).all(|w| w[1] > w[0]));
    let reference = h.reference_flux;

    // Split the targets into the branches below and above the anchor.
    let mut below: Vec<(usize, f64)> = Vec::new();
    let mut above: Vec<(usize, f64)> = Vec::new();
    for (i, &t) in targets.iter().enumerate() {
        if t < reference {
            below.push((i, t));
        } else {
            above.push((i, t));
        }
    }
    below.reverse(); // walk outward from the anchor

    let below_flux: Vec<f64> = below.iter().map(|&(_, f)| f).collect();
    let above_flux: Vec<f64> = above.iter().map(|&(_, f)| f).collect();
    let (mesh_b, pos_b) = mesh_through(reference, &below_flux);
    let (mesh_a, pos_a) = mesh_through(reference, &above_flux);
    let total_points = mesh_b.len() + mesh_a.len();

    let holder;
    let op = if total_points >= PROJECT_MIN_POINTS
        && h.dimension > PROJECT_DIM_FLOOR
        && !h.is_reduced()
    {
        let lo = reference.min(targets[0]);
        let hi = reference.max(*targets.last().unwrap());
        holder = h.project_onto_anchors(
            &anchor_grid(lo, hi, PROJECT_ANCHORS),
            PROJECT_LEVELS.min(h.dimension),
        )?;
        &holder
    } else {
        h
    };

    let mut out = vec![f64::NAN; targets.len()];
    for (branch, mesh, pos) in [(&below, &mesh_b, &pos_b), (&above, &mesh_a, &pos_a)] {
        if branch.is_empty() {
            continue;
        }
        let spectrum = spectrum_scan_operator(op, mesh)?;
        check_anchor(&spectrum)?;
        for (&(orig, _), &p) in branch.iter().zip(pos) {
            out[orig] = zeta_at_point(&spectrum, p)?;
        }
    }
    Ok(out)
}

/// Inclusive walk mesh from `start` through `targets` (which move strictly
/// monotonically away from `start`), with intermediate fill points keeping
/// every step at or below [`WALK_STEP`]. Returns the mesh and the mesh
/// position of each target.
fn mesh_through(start: f64, targets: &[f64]) -> (Vec<f64>, Vec<usize>) {
    if targets.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let mut mesh = vec![start];
    let mut pos = Vec::with_capacity(targets.len());
    for &t in targets {
        let prev = *mesh.last().unwrap();
        let gap = t - prev;
        if gap.abs() < 1e-12 {
            pos.push(mesh.len() - 1);
            continue;
        }
        let fills = (gap.abs() / WALK_STEP).ceil() as usize;
        for s in 1..fills {
            mesh.push(prev + gap * (s as f64) / (fills as f64));
        }
        mesh.push(t);
        pos.push(mesh.len() - 1);
    }
    (mesh, pos)
}

/// Inclusive grid over [lo, hi] with spacing at most `step`.
fn linstep(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).ceil().max(1.0) as usize + 1;
    (0..n)
        .map(|i| lo + (hi - lo) * (i as f64) / ((n - 1) as f64))
        .collect()
}

/// Evenly spaced anchor fluxes spanning [lo, hi].
fn anchor_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if hi - lo < 1e-9 || n < 2 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * (i as f64) / ((n - 1) as f64))
        .collect()
}

/// Demand that all four computational states are cleanly identified at the
/// first point of a walk; the whole walk inherits its identity from there.
fn check_anchor(spectrum: &EnergySpectrum) -> Result<()> {
    let labels = &spectrum.labels[0];
    let flux = spectrum.flux_points[0];
    let mut bad = Vec::new();
    for want in StateLabel::computational() {
        match labels.iter().find(|l| l.label == want) {
            Some(l) if l.overlap >= ANCHOR_MIN_OVERLAP => {}
            Some(l) => bad.push(format!("|{}⟩ best overlap {:.3}", want, l.overlap)),
            None => bad.push(format!("|{want}⟩ not found")),
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::tracking(format!(
            "computational states are not cleanly labeled at the walk anchor (flux {flux:.5}): \
             {}; anchor walks at a flux where the states are separated (set reference_flux)",
            bad.join(", ")
        )))
    }
}

/// ζ (MHz) from the labeled energies at mesh position `p`.
fn zeta_at_point(spectrum: &EnergySpectrum, p: usize) -> Result<f64> {
    let labels = &spectrum.labels[p];
    let energies = &spectrum.energies[p];
    let mut e = [f64::NAN; 4];
    for (slot, want) in StateLabel::computational().iter().enumerate() {
        match labels.iter().position(|l| l.label == *want) {
            Some(i) => e[slot] = energies[i],
            None => {
                return Err(Error::tracking(format!(
                    "computational state {want} missing from the tracked set at flux {:.5}",
                    spectrum.flux_points[p]
                )))
            }
        }
    }
    Ok(zeta_from_energies(e[0], e[1], e[2], e[3]))
}

/// ζ (MHz) from a single diagonalization with per-point bare labeling.
///
/// Only valid where the computational states are cleanly separated (their
/// best product overlap passes [`ANCHOR_MIN_OVERLAP`]); used for cheap
/// point evaluations between the nodes of an already-validated walk, e.g.
/// during idle-point refinement.
fn zeta_clean_point(h: &HamiltonianOperator, flux: f64) -> Result<f64> {
    let k = SCAN_LEVELS.min(h.dimension);
    let (energies, vectors) = eigensolve(h, flux, k)?;
    let bare = h.bare_basis(flux);
    let labeled = label_states(&vectors, &bare);
    let mut e = [f64::NAN; 4];
    for (slot, want) in StateLabel::computational().iter().enumerate() {
        let found = labeled
            .iter()
            .position(|l| l.label == *want && l.overlap >= ANCHOR_MIN_OVERLAP);
        match found {
            Some(i) => e[slot] = energies[i],
            None => {
                return Err(Error::tracking(format!(
                    "computational state {want} is not cleanly separated at flux {flux:.5}; \
                     a tracked walk is required here"
                )))
            }
        }
    }
    Ok(zeta_from_energies(e[0], e[1], e[2], e[3]))
}

// ---------------------------------------------------------------------------
// Parameter search
// ---------------------------------------------------------------------------

/// Inclusive linear range with `n` evaluation points (`n = 1` evaluates the
/// midpoint).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueRange {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl ValueRange {
    pub fn new(lo: f64, hi: f64, n: usize) -> Self {
        ValueRange { lo, hi, n }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// The evaluation points of this range.
    pub fn values(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.midpoint()];
        }
        (0..self.n)
            .map(|i| self.lo + (self.hi - self.lo) * (i as f64) / ((self.n - 1) as f64))
            .collect()
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !self.lo.is_finite() || !self.hi.is_finite() || self.lo > self.hi {
            return Err(Error::config(format!(
                "{what} range must be finite with lo ≤ hi"
            )));
        }
        if self.n == 0 || self.n > 64 {
            return Err(Error::config(format!(
                "{what} range must have between 1 and 64 points"
            )));
        }
        Ok(())
    }
}

/// Fixed stray capacitances (fF) carried through every candidate device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrayCaps {
    /// Direct qubit–qubit capacitance C₁₂.
    pub c12: f64,
    /// Cross couplings C₁₄ and C₂₃ between each qubit and the far coupler node.
    pub c14: f64,
    pub c23: f64,
    /// Direct capacitance C₃₄ between the coupler nodes.
    pub c34: f64,
}

impl Default for StrayCaps {
    /// Stray values of the reference device.
    fn default() -> Self {
        let p = CircuitParams::default_device();
        StrayCaps {
            c12: p.cap_matrix[0][1],
            c14: p.cap_matrix[0][3],
            c23: p.cap_matrix[1][2],
            c34: p.cap_matrix[2][3],
        }
    }
}

/// Search space and screening targets for [`parameter_search`].
///
/// The staged maps vary (coupler capacitance × coupler junction energy) and
/// then (junction energy × junction ratio); the qubit–coupler coupling
/// capacitance is held at its range midpoint throughout, since it is chosen
/// upstream of the staged procedure.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpec {
    /// Qubit–coupler coupling capacitance C₁₃ = C₂₄ (fF).
    pub coupling_cap_ff: ValueRange,
    /// Coupler node self-capacitance C₃₃ = C₄₄ (fF).
    pub coupler_cap_ff: ValueRange,
    /// Coupler junction energy E_J3 = E_J4 (GHz).
    pub coupler_ej_ghz: ValueRange,
    /// Shared-junction ratio α = E_J5 / E_Jc.
    pub junction_ratio: ValueRange,
    /// Largest residual |ζ| tolerated at the idle point (kHz).
    pub max_idle_zz_khz: f64,
    /// Smallest |ζ| required at the operating point (MHz).
    pub min_on_zz_mhz: f64,
    /// Stray capacitances held fixed across the search.
    pub strays: StrayCaps,
}

impl Default for SearchSpec {
    /// Ranges bracketing the reference device, with the junction ratio kept
    /// below the empirical bound α < 0.25 (larger ratios trade away the
    /// idle-point null).
    fn default() -> Self {
        SearchSpec {
            coupling_cap_ff: ValueRange::new(5.75, 5.75, 1),
            coupler_cap_ff: ValueRange::new(50.0, 130.0, 5),
            coupler_ej_ghz: ValueRange::new(18.0, 30.0, 5),
            junction_ratio: ValueRange::new(0.12, 0.24, 5),
            max_idle_zz_khz: 10.0,
            min_on_zz_mhz: 50.0,
            strays: StrayCaps::default(),
        }
    }
}

impl SearchSpec {
    /// Check the documented invariants. Targets must be finite; a target
    /// that nothing can satisfy (e.g. a negative idle tolerance) is allowed
    /// and simply yields an empty candidate list.
    pub fn validate(&self) -> Result<()> {
        self.coupling_cap_ff.validate("coupling capacitance")?;
        self.coupler_cap_ff.validate("coupler capacitance")?;
        self.coupler_ej_ghz.validate("coupler junction energy")?;
        self.junction_ratio.validate("junction ratio")?;
        if !self.max_idle_zz_khz.is_finite() || !self.min_on_zz_mhz.is_finite() {
            return Err(Error::config("search targets must be finite"));
        }
        let s = &self.strays;
        for (name, v) in [("C12", s.c12), ("C14", s.c14), ("C23", s.c23), ("C34", s.c34)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!(
                    "stray capacitance {name} must be non-negative"
                )));
            }
        }
        Ok(())
    }
}

/// One evaluated cell of a search map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchCell {
    pub coupling_cap_ff: f64,
    pub coupler_cap_ff: f64,
    pub e_jc_ghz: f64,
    pub alpha: f64,
    /// Signed ζ at the walked point of minimum |ζ| (kHz); NaN if the cell
    /// failed to evaluate.
    pub zeta_idle_khz: f64,
    /// Signed ζ at the walked point of maximum |ζ| (MHz); NaN if the cell
    /// failed to evaluate.
    pub zeta_max_mhz: f64,
    pub feasible: bool,
}

/// A full stage map (row-major over the stage's two swept knobs).
#[derive(Debug, Clone)]
pub struct SearchMap {
    pub cells: Vec<SearchCell>,
}

/// A feasible cell with its ranking score (lower is better: deep idle null
/// and strong on-point interaction).
#[derive(Debug, Clone, Copy)]
pub struct Candidate {
    pub cell: SearchCell,
    pub score: f64,
}

/// Result of the staged search.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// Stage one: coupler capacitance × junction energy at the midpoint
    /// junction ratio.
    pub stage_one: SearchMap,
    /// Stage two: junction energy × junction ratio at the capacitance
    /// selected from stage one.
    pub stage_two: SearchMap,
    /// Feasible cells from both stages, best score first.
    pub candidates: Vec<Candidate>,
    /// Populated only when no cell was feasible: the least-violating cell,
    /// with its relative target violation as the score.
    pub nearest_miss: Option<Candidate>,
}

/// Circuit parameters for one search cell: qubit nodes are carried over
/// from the reference device, coupler knobs and strays are set explicitly.
pub fn candidate_device(
    coupling_cap_ff: f64,
    coupler_cap_ff: f64,
    e_jc_ghz: f64,
    alpha: f64,
    strays: &StrayCaps,
) -> CircuitParams {
    let mut p = CircuitParams::default_device();
    let mut set = |i: usize, j: usize, v: f64| {
        p.cap_matrix[i][j] = v;
        p.cap_matrix[j][i] = v;
    };
    set(0, 2, coupling_cap_ff);
    set(1, 3, coupling_cap_ff);
    set(0, 1, strays.c12);
    set(0, 3, strays.c14);
    set(1, 2, strays.c23);
    set(2, 3, strays.c34);
    p.cap_matrix[2][2] = coupler_cap_ff;
    p.cap_matrix[3][3] = coupler_cap_ff;
    let ic_c = e_jc_ghz / ej_ghz_from_ic_na(1.0);
    p.critical_currents[2] = ic_c;
    p.critical_currents[3] = ic_c;
    p.critical_currents[4] = alpha * ic_c;
    p
}

/// Staged grid search over coupler designs.
///
/// Stage one maps (coupler capacitance × junction energy) at the midpoint
/// junction ratio; the capacitance of the best stage-one cell is then fixed
/// while stage two maps (junction energy × junction ratio). Cells are
/// screened by walking ζ over [0.25, 0.50] in a reduced basis — adequate
/// for comparing designs, not for pinning a chosen design's final numbers —
/// and ranked by how deep the idle null is and how strong the on-point
/// interaction gets. Individual cells may legitimately fail to evaluate in
/// exotic corners (their map entries carry NaN); only a stage with no
/// surviving cell at all is an error.
pub fn parameter_search(spec: &SearchSpec) -> Result<SearchOutcome> {
    spec.validate()?;
    staged_search(spec, &screen_cell)
}

/// ζ screening summary for one candidate device: signed ζ (kHz) at the
/// walked minimum of |ζ| and signed ζ (MHz) at the walked maximum.
fn screen_cell(params: &CircuitParams) -> Result<(f64, f64)> {
    let basis = BasisConfig {
        kept_levels_coupler: SEARCH_KEPT_COUPLER,
        ..BasisConfig::default()
    };
    let h = build_hamiltonian(params, &basis)?;
    let op = if h.dimension > PROJECT_DIM_FLOOR {
        h.project_onto_anchors(&anchor_grid(SEARCH_LO, SEARCH_HI, 3), 40.min(h.dimension))?
    } else {
        h
    };
    let targets = linstep(SEARCH_LO, SEARCH_HI, WALK_STEP);
    let zetas = tracked_zeta(&op, &targets)?;
    let mut z_idle = zetas[0];
    let mut z_max = zetas[0];
    for &z in &zetas {
        if z.abs() < z_idle.abs() {
            z_idle = z;
        }
        if z.abs() > z_max.abs() {
            z_max = z;
        }
    }
    Ok((z_idle * 1e3, z_max))
}

/// The staged search over an arbitrary cell evaluator (injected so cheap
/// synthetic landscapes can exercise the staging and ranking logic).
fn staged_search(
    spec: &SearchSpec,
    eval: &(impl Fn(&CircuitParams) -> Result<(f64, f64)> + Sync),
) -> Result<SearchOutcome> {
    let c_g = spec.coupling_cap_ff.midpoint();
    let alpha_mid = spec.junction_ratio.midpoint();

    // Stage one: coupler capacitance × junction energy.
    let mut knobs_one = Vec::new();
    for &cc in &spec.coupler_cap_ff.values() {
        for &ej in &spec.coupler_ej_ghz.values() {
            knobs_one.push((c_g, cc, ej, alpha_mid));
        }
    }
    let stage_one = evaluate_cells(spec, &knobs_one, eval, "stage one")?;

    // Stage two: junction energy × junction ratio at the chosen capacitance.
    let c_c_star = best_cell(spec, &stage_one.cells)
        .map(|c| c.coupler_cap_ff)
        .unwrap_or_else(|| spec.coupler_cap_ff.midpoint());
    let mut knobs_two = Vec::new();
    for &ej in &spec.coupler_ej_ghz.values() {
        for &al in &spec.junction_ratio.values() {
            knobs_two.push((c_g, c_c_star, ej, al));
        }
    }
    let stage_two = evaluate_cells(spec, &knobs_two, eval, "stage two")?;

    let mut candidates: Vec<Candidate> = stage_one
        .cells
        .iter()
        .chain(stage_two.cells.iter())
        .filter(|c| c.feasible)
        .map(|&cell| Candidate {
            cell,
            score: cell_score(spec, &cell),
        })
        .collect();
    candidates.sort_by(|a, b| a.score.partial_cmp(&b.score).unwrap());

    let nearest_miss = if candidates.is_empty() {
        stage_one
            .cells
            .iter()
            .chain(stage_two.cells.iter())
            .filter(|c| c.zeta_idle_khz.is_finite())
            .map(|&cell| Candidate {
                cell,
                score: cell_miss(spec, &cell),
            })
            .min_by(|a, b| a.score.partial_cmp(&b.score).unwrap())
    } else {
        None
    };

    Ok(SearchOutcome {
        stage_one,
        stage_two,
        candidates,
        nearest_miss,
    })
}

/// Evaluate one stage's cells (in parallel when enabled), tolerating
/// individual failures but rejecting a stage with no surviving cell.
fn evaluate_cells(
    spec: &SearchSpec,
    knobs: &[(f64, f64, f64, f64)],
    eval: &(impl Fn(&CircuitParams) -> Result<(f64, f64)> + Sync),
    what: &str,
) -> Result<SearchMap> {
    let strays = spec.strays;
    let results = map_slice(knobs, |&(cg, cc, ej, al)| {
        eval(&candidate_device(cg, cc, ej, al, &strays))
    });
    let mut cells = Vec::with_capacity(knobs.len());
    let mut survivors = 0;
    let mut last_err = String::new();
    for (&(cg, cc, ej, al), res) in knobs.iter().zip(results) {
        let (idle, max) = match res {
            Ok(pair) => {
                survivors += 1;
                pair
            }
            Err(e) => {
                last_err = e.to_string();
                (f64::NAN, f64::NAN)
            }
        };
        cells.push(SearchCell {
            coupling_cap_ff: cg,
            coupler_cap_ff: cc,
            e_jc_ghz: ej,
            alpha: al,
            zeta_idle_khz: idle,
            zeta_max_mhz: max,
            feasible: idle.abs() <= spec.max_idle_zz_khz && max.abs() >= spec.min_on_zz_mhz,
        });
    }
    if survivors == 0 {
        return Err(Error::numerical(format!(
            "all {} {what} cells failed to evaluate; last error: {last_err}",
            knobs.len()
        )));
    }
    Ok(SearchMap { cells })
}

/// Ranking score of a feasible cell: lower is better. Both terms are ≤ 1
/// for feasible cells.
fn cell_score(spec: &SearchSpec, cell: &SearchCell) -> f64 {
    if !cell.zeta_idle_khz.is_finite() || !cell.zeta_max_mhz.is_finite() {
        return f64::INFINITY;
    }
    cell.zeta_idle_khz.abs() / spec.max_idle_zz_khz.abs().max(1e-12)
        + spec.min_on_zz_mhz / cell.zeta_max_mhz.abs().max(1e-12)
}

/// Relative target violation of an infeasible cell (zero means feasible).
fn cell_miss(spec: &SearchSpec, cell: &SearchCell) -> f64 {
    if !cell.zeta_idle_khz.is_finite() || !cell.zeta_max_mhz.is_finite() {
        return f64::INFINITY;
    }
    let idle_over = (cell.zeta_idle_khz.abs() - spec.max_idle_zz_khz).max(0.0)
        / spec.max_idle_zz_khz.abs().max(1e-12);
    let on_short = (spec.min_on_zz_mhz - cell.zeta_max_mhz.abs()).max(0.0)
        / spec.min_on_zz_mhz.abs().max(1e-12);
    idle_over + on_short
}

/// Best cell of a stage: the best-scoring feasible cell, or failing that
/// the least-violating one.
fn best_cell<'a>(spec: &SearchSpec, cells: &'a [SearchCell]) -> Option<&'a SearchCell> {
    let feasible = cells
        .iter()
        .filter(|c| c.feasible)
        .min_by(|a, b| cell_score(spec, a).partial_cmp(&cell_score(spec, b)).unwrap());
    feasible.or_else(|| {
        cells
            .iter()
            .filter(|c| c.zeta_idle_khz.is_finite())
            .min_by(|a, b| cell_miss(spec, a).partial_cmp(&cell_miss(spec, b)).unwrap())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eigh, lanczos_lowest_matvec, CMat, CVec};
    use approx::assert_relative_eq;
    use num_complex::Complex;

    fn full_operator() -> &'static HamiltonianOperator {
        crate::test_fixtures::default_full_operator()
    }

    /// Shared reduced model of the reference device spanning the scan window.
    fn shared_reduced() -> &'static HamiltonianOperator {
        crate::test_fixtures::default_reduced_operator()
    }

    /// A deliberately small basis for structural checks: accurate enough to
    /// show every qualitative feature, cheap enough for dense solves.
    fn tiny_basis(reference: Option<f64>) -> BasisConfig {
        BasisConfig {
            charge_cutoff_qubit: 5,
            charge_cutoff_coupler: 5,
            kept_levels_qubit: 4,
            kept_levels_coupler: 8,
            kept_total: 20,
            reference_flux: reference,
            enforce_charge_support: false,
        }
    }

    #[test]
    fn zeta_ignores_common_energy_offsets() {
        let (e00, e01, e10, e11) = (4.93, 10.35, 10.91, 16.27);
        let base = zeta_from_energies(e00, e01, e10, e11);
        for off in [-3.4e3, -1.0, 0.0, 2.5, 7.7e4] {
            let shifted = zeta_from_energies(e00 + off, e01 + off, e10 + off, e11 + off);
            assert_relative_eq!(shifted, base, epsilon = 1e-6, max_relative = 1e-9);
        }
    }

    #[test]
    fn projection_matches_direct_solve_at_high_flux() {
        let (direct, _) = eigensolve(full_operator(), 0.47, SCAN_LEVELS).unwrap();
        let (reduced, _) = eigensolve(shared_reduced(), 0.47, SCAN_LEVELS).unwrap();
        for (d, r) in direct.iter().zip(&reduced) {
            assert!((d - r).abs() < 1e-8, "level mismatch: {d} vs {r}");
        }
    }

    #[test]
    fn idle_zz_matches_reported_operating_point() {
        let zeta = zz_at_operator(shared_reduced(), 0.309).unwrap();
        assert!(zeta < 0.0, "idle-point zeta should be negative, got {zeta}");
        assert!(
            (zeta - (-0.0063)).abs() < 0.003,
            "idle zeta {zeta} MHz too far from -6.3 kHz"
        );
    }

    #[test]
    fn maximum_zz_matches_reported_value() {
        let zeta = zz_at_operator(shared_reduced(), 0.47).unwrap();
        assert!(
            (zeta - (-82.5)).abs() < 3.5,
            "on-point zeta {zeta} MHz too far from -82.5 MHz"
        );
    }

    #[test]
    fn decoupled_qubits_have_zero_zz() {
        let strays = StrayCaps {
            c12: 0.0,
            c14: 0.0,
            c23: 0.0,
            c34: 1.73,
        };
        let params = candidate_device(0.0, 108.0, 23.7, 0.216, &strays);
        let h = build_hamiltonian(&params, &tiny_basis(None)).unwrap();
        let zeta = zz_at_operator(&h, 0.35).unwrap();
        assert!(zeta.abs() < 1e-6, "decoupled zeta = {zeta} MHz");
    }

    #[test]
    fn zeta_is_even_in_flux() {
        let h = build_hamiltonian(&CircuitParams::default_device(), &tiny_basis(Some(0.0)))
            .unwrap();
        for f in [0.07, 0.12] {
            let plus = zz_at_operator(&h, f).unwrap();
            let minus = zz_at_operator(&h, -f).unwrap();
            assert_relative_eq!(plus, minus, epsilon = 1e-8, max_relative = 1e-6);
        }
    }

    #[test]
    fn scan_reproduces_on_off_ratio() {
        let grid = linstep(0.25, 0.5, 0.0025);
        let curve = zz_scan_operator(shared_reduced(), &grid).unwrap();
        assert!(curve.onoff_ratio >= 1.0);
        assert!(
            grid.contains(&curve.idle_point) && grid.contains(&curve.max_point),
            "extrema must lie on the grid"
        );
        assert!(
            (curve.idle_point - 0.309).abs() <= 0.005,
            "idle point {}",
            curve.idle_point
        );
        assert!(
            (0.45..=0.49).contains(&curve.max_point),
            "max point {}",
            curve.max_point
        );
        assert!(
            (6e3..=2.6e4).contains(&curve.onoff_ratio),
            "on-off ratio {}",
            curve.onoff_ratio
        );
        let at_idle = curve
            .zeta_mhz
            .iter()
            .zip(&curve.flux_points)
            .find(|(_, &f)| f == curve.idle_point)
            .unwrap()
            .0;
        assert!(*at_idle < 0.0, "zeta stays negative at the idle point");
    }

    #[test]
    fn single_point_grid_has_unit_ratio() {
        let curve = zz_scan_operator(shared_reduced(), &[0.3]).unwrap();
        assert_eq!(curve.idle_point, 0.3);
        assert_eq!(curve.max_point, 0.3);
        assert_relative_eq!(curve.onoff_ratio, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn scan_rejects_bad_grids() {
        let h = shared_reduced();
        assert!(zz_scan_operator(h, &[]).is_err());
        assert!(zz_scan_operator(h, &[0.3, 0.3]).is_err());
        assert!(zz_scan_operator(h, &[0.3, 0.2]).is_err());
        assert!(zz_scan_operator(h, &[0.4, 0.6]).is_err());
        assert!(zz_scan_operator(h, &[-0.1, 0.2]).is_err());
    }

    #[test]
    fn anchoring_in_the_hybridized_region_is_rejected() {
        let mut basis = BasisConfig::default();
        basis.reference_flux = Some(0.47);
        let h = build_hamiltonian(&CircuitParams::default_device(), &basis).unwrap();
        let err = zz_at_operator(&h, 0.47).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("overlap"), "diagnostics missing: {msg}");
    }

    #[test]
    fn find_idle_point_matches_reported_flux() {
        let x = find_idle_point_operator(shared_reduced(), (0.25, 0.35), IDLE_REFINE_TOL).unwrap();
        assert!((x - 0.309).abs() <= 0.005, "idle point {x}");
    }

    #[test]
    fn idle_refinement_is_converged() {
        let a = find_idle_point_operator(shared_reduced(), (0.29, 0.33), 1e-4).unwrap();
        let b = find_idle_point_operator(shared_reduced(), (0.29, 0.33), 5e-5).unwrap();
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }

    #[test]
    fn idle_search_requires_an_interior_minimum() {
        let err = find_idle_point_operator(shared_reduced(), (0.40, 0.47), IDLE_REFINE_TOL)
            .unwrap_err();
        assert!(err.to_string().contains("minimum"), "{err}");
    }

    #[test]
    fn zero_ratio_idles_at_quarter_flux() {
        // With no shared junction the coupler modes stay put and the idle
        // condition reduces to the quarter-flux point exactly.
        let x = crate::toy_model::idle_point_estimate(0.0).unwrap();
        assert_relative_eq!(x, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn coupling_capacitance_monotonically_strengthens_zz() {
        let mut magnitudes = Vec::new();
        for s in [0.0, 0.5, 1.0] {
            let mut p = CircuitParams::default_device();
            for (i, j) in [(0, 2), (1, 3)] {
                p.cap_matrix[i][j] *= s;
                p.cap_matrix[j][i] *= s;
            }
            let h = build_hamiltonian(&p, &tiny_basis(None)).unwrap();
            magnitudes.push(zz_at_operator(&h, 0.47).unwrap().abs());
        }
        assert!(
            magnitudes[0] <= magnitudes[1] && magnitudes[1] <= magnitudes[2],
            "|zeta| not monotone in coupling: {magnitudes:?}"
        );
    }

    /// Brute-force ζ on the untruncated four-node charge lattice at cutoff
    /// N = 4 (9 charge states per node), via a matrix-free Lanczos solve and
    /// product-state labeling. Mirrors nothing of the two-stage pipeline.
    fn brute_force_zeta(params: &CircuitParams, flux: f64) -> f64 {
        let n = 4usize;
        let d = 2 * n + 1;
        let dim = d.pow(4);
        let ec = params.charging_matrix_ghz().unwrap();
        let ej = params.josephson_energies_ghz();
        let phi = 2.0 * std::f64::consts::PI * flux;
        let hop5 = Complex::from_polar(0.5 * ej[4], -phi) * Complex::new(-1.0, 0.0);

        // Diagonal charging part.
        let mut diag = vec![0.0f64; dim];
        let charge = |idx: usize, node: usize| -> f64 {
            let shift = 3 - node;
            ((idx / d.pow(shift as u32)) % d) as f64 - n as f64
        };
        for (idx, dval) in diag.iter_mut().enumerate() {
            let q: Vec<f64> = (0..4).map(|nd| charge(idx, nd)).collect();
            let mut e = 0.0;
            for i in 0..4 {
                e += 4.0 * ec[i][i] * q[i] * q[i];
                for j in (i + 1)..4 {
                    e += 8.0 * ec[i][j] * q[i] * q[j];
                }
            }
            *dval = e;
        }

        let strides = [d.pow(3), d.pow(2), d, 1];
        let matvec = |v: &CVec| -> CVec {
            let mut w = CVec::zeros(dim);
            for idx in 0..dim {
                let mut acc = Complex::new(diag[idx], 0.0) * v[idx];
                // Single-junction cosines: hop ±1 on each node.
                for node in 0..4 {
                    let q = charge(idx, node);
                    if q < n as f64 {
                        acc += Complex::new(-0.5 * ej[node], 0.0) * v[idx + strides[node]];
                    }
                    if q > -(n as f64) {
                        acc += Complex::new(-0.5 * ej[node], 0.0) * v[idx - strides[node]];
                    }
                }
                // Shared junction: lowers n3 while raising n4, and back.
                let (q3, q4) = (charge(idx, 2), charge(idx, 3));
                if q3 > -(n as f64) && q4 < n as f64 {
                    acc += hop5.conj() * v[idx - strides[2] + strides[3]];
                }
                if q3 < n as f64 && q4 > -(n as f64) {
                    acc += hop5 * v[idx + strides[2] - strides[3]];
                }
                w[idx] = acc;
            }
            w
        };

        let (vals, vecs) = lanczos_lowest_matvec(dim, matvec, 12, 1e-8, 0x5eed).unwrap();

        // Bare product states at this flux: per-qubit charge problems and
        // the two-node coupler subsystem including the shared junction.
        let single = |four_ec: f64, ejq: f64| -> CMat {
            let mut h = CMat::zeros(d, d);
            for (row, q) in (-(n as i64)..=n as i64).enumerate() {
                h[(row, row)] = Complex::new(four_ec * (q * q) as f64, 0.0);
                if row + 1 < d {
                    h[(row, row + 1)] = Complex::new(-0.5 * ejq, 0.0);
                    h[(row + 1, row)] = Complex::new(-0.5 * ejq, 0.0);
                }
            }
            h
        };
        let (_, vq1) = eigh(&single(4.0 * ec[0][0], ej[0]));
        let (_, vq2) = eigh(&single(4.0 * ec[1][1], ej[1]));

        let dc = d * d;
        let mut hc = CMat::zeros(dc, dc);
        for r3 in 0..d {
            for r4 in 0..d {
                let row = r3 * d + r4;
                let (q3, q4) = (r3 as f64 - n as f64, r4 as f64 - n as f64);
                hc[(row, row)] = Complex::new(
                    4.0 * ec[2][2] * q3 * q3 + 4.0 * ec[3][3] * q4 * q4
                        + 8.0 * ec[2][3] * q3 * q4,
                    0.0,
                );
                if r3 + 1 < d {
                    hc[(row, row + d)] += Complex::new(-0.5 * ej[2], 0.0);
                    hc[(row + d, row)] += Complex::new(-0.5 * ej[2], 0.0);
                }
                if r4 + 1 < d {
                    hc[(row, row + 1)] += Complex::new(-0.5 * ej[3], 0.0);
                    hc[(row + 1, row)] += Complex::new(-0.5 * ej[3], 0.0);
                }
                if r3 > 0 && r4 + 1 < d {
                    hc[(row, row - d + 1)] += hop5.conj();
                    hc[(row - d + 1, row)] += hop5;
                }
            }
        }
        let (_, vc) = eigh(&hc);

        // ζ from the brute eigenstates best matching each product state.
        let mut comp = [0.0f64; 4];
        for (slot, (i, j)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
            let mut product = CVec::zeros(dim);
            for a in 0..d {
                for b in 0..d {
                    let qq = vq1[(a, *i)] * vq2[(b, *j)];
                    if qq.norm_sqr() < 1e-24 {
                        continue;
                    }
                    for c in 0..dc {
                        product[(a * d + b) * dc + c] = qq * vc[(c, 0)];
                    }
                }
            }
            let best = (0..vecs.len())
                .max_by(|&x, &y| {
                    let ox = product.dotc(&vecs[x]).norm_sqr();
                    let oy = product.dotc(&vecs[y]).norm_sqr();
                    ox.partial_cmp(&oy).unwrap()
                })
                .unwrap();
            comp[slot] = vals[best];
        }
        zeta_from_energies(comp[0], comp[1], comp[2], comp[3])
    }

    #[test]
    fn two_stage_matches_brute_force_at_small_cutoff() {
        // Same deliberately small charge cutoff on both sides, so the two
        // pipelines describe identical physics and must agree far below the
        // kHz scale even though neither is converged in absolute terms.
        let params = CircuitParams::default_device();
        let basis = BasisConfig {
            charge_cutoff_qubit: 4,
            charge_cutoff_coupler: 4,
            kept_levels_qubit: 6,
            kept_levels_coupler: 30,
            kept_total: 20,
            reference_flux: Some(0.319409),
            enforce_charge_support: false,
        };
        let h = build_hamiltonian(&params, &basis).unwrap();
        // (flux, frozen two-stage ζ, frozen brute ζ) in MHz.
        let cases = [
            (0.30, 1.9467e-3, 1.9411e-3),
            (0.35, -3.449e-4, -3.560e-4),
        ];
        for (flux, frozen_ts, frozen_brute) in cases {
            let ts = zeta_clean_point(&h, flux).unwrap();
            let brute = brute_force_zeta(&params, flux);
            assert!(
                (ts - frozen_ts).abs() < 2e-5,
                "two-stage zeta({flux}) = {ts} MHz, expected {frozen_ts}"
            );
            assert!(
                (brute - frozen_brute).abs() < 2e-5,
                "brute zeta({flux}) = {brute} MHz, expected {frozen_brute}"
            );
            assert!(
                (ts - brute).abs() < 5e-5,
                "pipelines disagree at {flux}: {ts} vs {brute} MHz"
            );
        }
    }

    #[test]
    fn search_centered_on_reference_device_is_feasible() {
        let p = CircuitParams::default_device();
        let e_jc = 0.5 * (p.josephson_energies_ghz()[2] + p.josephson_energies_ghz()[3]);
        let alpha = p.junction_ratio();
        let c_c = 0.5 * (p.cap_matrix[2][2] + p.cap_matrix[3][3]);
        let spread = |v: f64| ValueRange::new(v * 0.92, v * 1.08, 3);
        let spec = SearchSpec {
            coupling_cap_ff: ValueRange::new(5.75, 5.75, 1),
            coupler_cap_ff: spread(c_c),
            coupler_ej_ghz: spread(e_jc),
            junction_ratio: spread(alpha),
            max_idle_zz_khz: 12.0,
            min_on_zz_mhz: 60.0,
            strays: StrayCaps::default(),
        };
        let out = parameter_search(&spec).unwrap();
        assert_eq!(out.stage_one.cells.len(), 9);
        assert_eq!(out.stage_two.cells.len(), 9);
        // The cell at the reference-device values must pass both targets.
        let center = out
            .stage_one
            .cells
            .iter()
            .find(|c| (c.coupler_cap_ff - c_c).abs() < 1e-9 && (c.e_jc_ghz - e_jc).abs() < 1e-9)
            .expect("center cell present");
        assert!(
            center.feasible,
            "reference-device cell infeasible: idle {} kHz, max {} MHz",
            center.zeta_idle_khz, center.zeta_max_mhz
        );
        assert!(!out.candidates.is_empty());
        assert!(out.nearest_miss.is_none());
        let top = &out.candidates[0];
        assert!(top.cell.zeta_idle_khz.abs() <= 12.0);
        assert!(top.cell.zeta_max_mhz.abs() >= 60.0);
    }

    #[test]
    fn impossible_targets_yield_empty_candidates() {
        let spec = SearchSpec {
            coupler_cap_ff: ValueRange::new(100.0, 120.0, 2),
            coupler_ej_ghz: ValueRange::new(20.0, 26.0, 2),
            junction_ratio: ValueRange::new(0.18, 0.24, 2),
            max_idle_zz_khz: -1.0, // |ζ| can never be negative
            ..SearchSpec::default()
        };
        let out = staged_search(&spec, &|_| Ok((5.0, 80.0))).unwrap();
        assert!(out.candidates.is_empty());
        let miss = out.nearest_miss.expect("nearest miss reported");
        assert!(miss.score > 0.0);
        assert!(miss.cell.zeta_idle_khz.is_finite());
    }

    #[test]
    fn grid_refinement_keeps_top_candidate_stable() {
        // Smooth synthetic landscape with its optimum off both grids.
        let eval = |p: &CircuitParams| -> Result<(f64, f64)> {
            let cc = p.cap_matrix[2][2];
            let ej = p.josephson_energies_ghz()[2];
            let al = p.junction_ratio();
            let idle = 2.0
                + 900.0 * (al - 0.193).powi(2)
                + 0.09 * (ej - 24.3).powi(2)
                + 0.004 * (cc - 68.0).powi(2);
            let on = 75.0
                - 600.0 * (al - 0.193).powi(2)
                - 0.05 * (ej - 24.3).powi(2)
                - 0.006 * (cc - 68.0).powi(2);
            Ok((idle, on))
        };
        let spec_with = |n: usize| SearchSpec {
            coupling_cap_ff: ValueRange::new(5.0, 6.5, 1),
            coupler_cap_ff: ValueRange::new(55.0, 85.0, n),
            coupler_ej_ghz: ValueRange::new(18.0, 30.0, n),
            junction_ratio: ValueRange::new(0.13, 0.25, n),
            max_idle_zz_khz: 10.0,
            min_on_zz_mhz: 50.0,
            strays: StrayCaps::default(),
        };
        let coarse = staged_search(&spec_with(5), &eval).unwrap();
        let fine = staged_search(&spec_with(9), &eval).unwrap();
        let a = coarse.candidates.first().expect("coarse candidates").cell;
        let b = fine.candidates.first().expect("fine candidates").cell;
        // Stability within one coarse cell along every staged axis.
        assert!((a.coupler_cap_ff - b.coupler_cap_ff).abs() <= 30.0 / 4.0 + 1e-9);
        assert!((a.e_jc_ghz - b.e_jc_ghz).abs() <= 12.0 / 4.0 + 1e-9);
        assert!((a.alpha - b.alpha).abs() <= 0.12 / 4.0 + 1e-9);
    }

    #[test]
    fn search_spec_validation_rejects_malformed_input() {
        let mut s = SearchSpec::default();
        s.coupler_cap_ff.n = 0;
        assert!(s.validate().is_err());
        let mut s = SearchSpec::default();
        s.coupler_ej_ghz = ValueRange::new(30.0, 18.0, 3);
        assert!(s.validate().is_err());
        let mut s = SearchSpec::default();
        s.strays.c12 = -0.1;
        assert!(s.validate().is_err());
        let mut s = SearchSpec::default();
        s.max_idle_zz_khz = f64::NAN;
        assert!(s.validate().is_err());
        assert_eq!(ValueRange::new(2.0, 4.0, 1).values(), vec![3.0]);
        assert!(SearchSpec::default().validate().is_ok());
    }

    #[test]
    fn default_grid_covers_the_scan_window() {
        let g = default_scan_grid();
        assert_eq!(g.len(), 201);
        assert_relative_eq!(g[0], 0.25, epsilon = 1e-15);
        assert_relative_eq!(*g.last().unwrap(), 0.5, epsilon = 1e-15);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
