//! Flux-pulse synthesis and transmission-line distortion modeling.
//!
//! Three concerns live here:
//!
//! * **Adiabatic pulse synthesis.** The CZ flux excursion is generated from a
//!   control angle θ(t) whose rate of change is a zeroth-order discrete
//!   prolate (Slepian) window — the taper that concentrates the most energy
//!   in a given bandwidth, hence the smoothest way to steer an avoided
//!   crossing at fixed speed. The angle maps to a waveform through the
//!   two-level reduction `H_z/H_x ≈ C·z²`; the free constant is absorbed by
//!   normalizing the output to start and end at exactly zero with a unit
//!   peak. The rising half is mirrored about the midpoint, so the synthesized
//!   pulse is symmetric, non-negative and unimodal.
//! * **Z-line distortion.** Transmission imperfections are modeled by a step
//!   response `1 + Σ aₖ·exp(−t/τₖ)`. Applying and inverting the filter use
//!   exact per-term one-pole recursions on the piecewise-constant (sampled)
//!   waveform — no FFT, no regularization, and the inverse is algebraically
//!   exact, so predistortion round-trips to floating-point accuracy.
//! * **Turn-off transients.** The phase a Ramsey-style probe accumulates
//!   after a long flux pulse has a closed form in the same (aₖ, τₖ)
//!   parameters; [`transient_phase`] evaluates it for calibration fits.
//!
//! Waveform amplitudes are expressed directly as the external-flux excursion
//! (φ_ex/2π) away from the idle point; the conversion to instrument voltage
//! is left to amplitude calibration and never enters the model.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::linalg::{tridiagonal_top_eigenpair, CubicSpline};
use crate::{Error, Result};

/// Default sample period: two samples per nanosecond, the waveform-generator
/// rate assumed throughout the crate.
pub const DEFAULT_DT_NS: f64 = 0.5;

/// Default pulse duration (ns) for the CZ excursion.
pub const DEFAULT_DURATION_NS: f64 = 48.0;

/// Default zero padding (ns) added on each side of the synthesized pulse.
pub const DEFAULT_PAD_NS: f64 = 2.0;

/// Default initial control angle (rad). Strictly positive so the
/// `z ∝ sqrt(cot θ)` mapping stays finite at the pulse edges.
pub const DEFAULT_THETA_INITIAL: f64 = 0.05;

/// Default final control angle (rad), just short of the π/2 anti-crossing
/// midpoint for the same edge-regularity reason.
pub const DEFAULT_THETA_FINAL: f64 = std::f64::consts::FRAC_PI_2 - 0.05;

/// Default number of control points handed to pulse optimizers.
pub const DEFAULT_CONTROL_POINTS: usize = 20;

/// Time–half-bandwidth product of the prolate window. At 3.0 the window's
/// out-of-band energy fraction is ~1e-7, which keeps the control angle's
/// derivative effectively band-limited without flattening the pulse.
const TIME_BANDWIDTH: f64 = 3.0;

/// Resolution of the fixed internal grid on which the control-angle profile
/// is tabulated. Keeping it independent of the output sampling makes the
/// synthesized shape an exact function of relative position within the
/// pulse, so rescaling the duration leaves shared samples bit-identical.
const REFERENCE_GRID: usize = 4097;

/// Default decay-tail length appended by the distortion filters, as a
/// multiple of the slowest time constant in the model.
const TAIL_TAU_FACTOR: f64 = 5.0;

/// A sampled flux waveform.
///
/// `samples` are excursions of φ_ex/2π from the idle point, `dt_ns` is the
/// sample period and `pad_samples` records how many zero samples were
/// synthesized on each side of the pulse proper. Filter outputs reset the
/// pad bookkeeping to zero because their decay tails are live samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub dt_ns: f64,
    pub pad_samples: usize,
}

impl Waveform {
    /// Build a waveform from raw samples, rejecting non-finite values and
    /// non-positive sample periods.
    pub fn new(samples: Vec<f64>, dt_ns: f64, pad_samples: usize) -> Result<Self> {
        if !(dt_ns.is_finite() && dt_ns > 0.0) {
            return Err(Error::config("waveform sample period must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::config("waveform samples must be finite"));
        }
        if 2 * pad_samples > samples.len() {
            return Err(Error::config("pad bookkeeping exceeds the sample count"));
        }
        Ok(Waveform { samples, dt_ns, pad_samples })
    }

    /// Sample times in ns, starting at zero.
    pub fn times_ns(&self) -> Vec<f64> {
        (0..self.samples.len()).map(|j| j as f64 * self.dt_ns).collect()
    }

    /// Total time spanned by the samples (ns); zero for fewer than two.
    pub fn span_ns(&self) -> f64 {
        match self.samples.len() {
            0 | 1 => 0.0,
            n => (n - 1) as f64 * self.dt_ns,
        }
    }

    /// Largest absolute sample value.
    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, s| m.max(s.abs()))
    }

    /// Error if any sample exceeds the configured maximum excursion.
    pub fn check_excursion(&self, max_abs: f64) -> Result<()> {
        let peak = self.peak();
        if peak > max_abs {
            return Err(Error::config(format!(
                "waveform excursion {peak:.6} exceeds the allowed {max_abs:.6}"
            )));
        }
        Ok(())
    }

    /// Copy with every sample multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|s| s * factor).collect(),
            dt_ns: self.dt_ns,
            pad_samples: self.pad_samples,
        }
    }

    /// Serialize as `t_ns,amplitude` CSV. Values use the shortest
    /// round-trippable decimal form, so parsing the text back reproduces the
    /// samples bit for bit.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_ns,amplitude\n");
        for (j, s) in self.samples.iter().enumerate() {
            let t = j as f64 * self.dt_ns;
            out.push_str(&format!("{t},{s}\n"));
        }
        out
    }

    /// Parse the `t_ns,amplitude` CSV format produced by [`Waveform::to_csv`].
    ///
    /// The sample period is inferred from the time column (which must be
    /// uniform); the pad count is inferred as the number of zero samples
    /// shared by both ends.
    pub fn from_csv(text: &str) -> Result<Waveform> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == "t_ns,amplitude" => {}
            _ => return Err(Error::config("waveform CSV must start with a t_ns,amplitude header")),
        }
        let mut times = Vec::new();
        let mut samples = Vec::new();
        for (row, line) in lines.enumerate() {
            let mut cols = line.split(',');
            let (t, a) = match (cols.next(), cols.next(), cols.next()) {
                (Some(t), Some(a), None) => (t, a),
                _ => {
                    return Err(Error::config(format!(
                        "waveform CSV row {} must have exactly two columns",
                        row + 2
                    )))
                }
            };
            let t: f64 = t.trim().parse().map_err(|_| {
                Error::config(format!("waveform CSV row {}: bad time value", row + 2))
            })?;
            let a: f64 = a.trim().parse().map_err(|_| {
                Error::config(format!("waveform CSV row {}: bad amplitude value", row + 2))
            })?;
            times.push(t);
            samples.push(a);
        }
        if samples.len() < 2 {
            return Err(Error::config("waveform CSV needs at least two samples"));
        }
        let dt = times[1] - times[0];
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::config("waveform CSV time column must be increasing"));
        }
        for (j, w) in times.windows(2).enumerate() {
            let step = w[1] - w[0];
            if (step - dt).abs() > 1e-9 * dt.max(1.0) {
                return Err(Error::config(format!(
                    "waveform CSV time column is not uniform at row {}",
                    j + 3
                )));
            }
        }
        let lead = samples.iter().take_while(|s| **s == 0.0).count();
        let trail = samples.iter().rev().take_while(|s| **s == 0.0).count();
        let pad = lead.min(trail).min(samples.len() / 2);
        Waveform::new(samples, dt, pad)
    }
}

/// One exponential term of a distortion model's step response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionTerm {
    /// Dimensionless amplitude of the transient.
    pub a: f64,
    /// Decay time constant (ns).
    pub tau_ns: f64,
}

/// Multi-exponential model of Z-line distortion with step response
/// `s(t) = 1 + Σ aₖ·exp(−t/τₖ)` for `t ≥ 0`.
///
/// A model is invertible (usable for predistortion) only while `s(t)` stays
/// positive; [`DistortionModel::validate`] checks that along with finiteness.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DistortionModel {
    pub terms: Vec<DistortionTerm>,
}

impl DistortionModel {
    pub fn new(terms: Vec<DistortionTerm>) -> Self {
        DistortionModel { terms }
    }

    /// Convenience constructor from `(a, tau_ns)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        DistortionModel {
            terms: pairs.iter().map(|&(a, tau_ns)| DistortionTerm { a, tau_ns }).collect(),
        }
    }

    /// Flux-transient parameters of the reference device calibrated from
    /// short-term (sub-microsecond) turn-off measurements.
    pub fn short_term_calibrated() -> Self {
        Self::from_pairs(&[(-0.0104, 603.3), (-0.0137, 79.45)])
    }

    /// Flux-transient parameters of the reference device calibrated from
    /// long-term (tens-to-hundreds of microseconds) turn-off measurements.
    pub fn long_term_calibrated() -> Self {
        Self::from_pairs(&[(0.12, 400.5e3), (0.038, 71.02e3), (0.00525, 13.60e3)])
    }

    /// Step response `1 + Σ aₖ·exp(−t/τₖ)` at `t_ns ≥ 0`.
    pub fn step_response(&self, t_ns: f64) -> f64 {
        1.0 + self
            .terms
            .iter()
            .map(|term| term.a * (-t_ns / term.tau_ns).exp())
            .sum::<f64>()
    }

    /// Slowest time constant in the model; zero when empty.
    pub fn max_tau_ns(&self) -> f64 {
        self.terms.iter().fold(0.0_f64, |m, t| m.max(t.tau_ns))
    }

    /// Structural checks: finite amplitudes, positive finite time constants.
    /// The forward filter is well defined under these alone.
    fn check_terms(&self) -> Result<()> {
        for term in &self.terms {
            if !term.a.is_finite() {
                return Err(Error::config("distortion amplitudes must be finite"));
            }
            if !(term.tau_ns.is_finite() && term.tau_ns > 0.0) {
                return Err(Error::config("distortion time constants must be positive"));
            }
        }
        Ok(())
    }

    /// Full model validation: structural checks plus positivity of the step
    /// response over `t ≥ 0`, which is what makes the filter invertible.
    /// Positivity is checked on a dense logarithmic time grid spanning well
    /// below the fastest and beyond the slowest time constant.
    pub fn validate(&self) -> Result<()> {
        self.check_terms()?;
        if self.terms.is_empty() {
            return Ok(());
        }
        if self.step_response(0.0) <= 0.0 {
            return Err(Error::config(
                "distortion step response is not positive at t = 0".to_string(),
            ));
        }
        let min_tau = self.terms.iter().fold(f64::INFINITY, |m, t| m.min(t.tau_ns));
        let (lo, hi) = (min_tau * 1e-3, self.max_tau_ns() * 20.0);
        let steps = 2048;
        let ratio = (hi / lo).powf(1.0 / steps as f64);
        let mut t = lo;
        for _ in 0..=steps {
            if self.step_response(t) <= 0.0 {
                return Err(Error::config(format!(
                    "distortion step response crosses zero near t = {t:.3} ns; \
                     the model is not invertible"
                )));
            }
            t *= ratio;
        }
        Ok(())
    }
}

/// Configuration for [`slepian_unit_pulse`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlepianConfig {
    /// Pulse duration (ns), excluding padding.
    pub duration_ns: f64,
    /// Sample period (ns).
    pub dt_ns: f64,
    /// Zero padding (ns) added on each side.
    pub pad_ns: f64,
    /// Control angle at the pulse edges (rad); must be strictly positive.
    pub theta_initial: f64,
    /// Control angle at the pulse peak (rad); at most π/2.
    pub theta_final: f64,
    /// Number of control points exposed to pulse optimizers.
    pub control_points: usize,
}

impl Default for SlepianConfig {
    fn default() -> Self {
        SlepianConfig {
            duration_ns: DEFAULT_DURATION_NS,
            dt_ns: DEFAULT_DT_NS,
            pad_ns: DEFAULT_PAD_NS,
            theta_initial: DEFAULT_THETA_INITIAL,
            theta_final: DEFAULT_THETA_FINAL,
            control_points: DEFAULT_CONTROL_POINTS,
        }
    }
}

impl SlepianConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_ns.is_finite() && self.duration_ns > 0.0) {
            return Err(Error::config("pulse duration must be positive"));
        }
        if !(self.dt_ns.is_finite() && self.dt_ns > 0.0) {
            return Err(Error::config("sample period must be positive"));
        }
        if !(self.pad_ns.is_finite() && self.pad_ns >= 0.0) {
            return Err(Error::config("padding must be non-negative"));
        }
        if self.interval_count() < 2 {
            return Err(Error::config(
                "pulse duration must cover at least two sample intervals",
            ));
        }
        let valid_angles = self.theta_initial.is_finite()
            && self.theta_final.is_finite()
            && 0.0 < self.theta_initial
            && self.theta_initial < self.theta_final
            && self.theta_final <= std::f64::consts::FRAC_PI_2;
        if !valid_angles {
            return Err(Error::config(
                "control angles must satisfy 0 < theta_initial < theta_final <= pi/2",
            ));
        }
        if self.control_points < 4 {
            return Err(Error::config("at least four control points are required"));
        }
        Ok(())
    }

    /// Number of sample intervals across the pulse proper.
    fn interval_count(&self) -> usize {
        (self.duration_ns / self.dt_ns).round() as usize
    }

    /// Number of zero samples padded on each side.
    fn pad_samples(&self) -> usize {
        (self.pad_ns / self.dt_ns).round() as usize
    }
}

/// Zeroth-order discrete prolate (Slepian) window of length `len` with
/// time–half-bandwidth product `time_bandwidth`, normalized to unit peak.
///
/// Computed as the top eigenvector of the standard commuting symmetric
/// tridiagonal matrix, which shares the window's eigenvectors but has a
/// well-separated spectrum, so the top pair is obtained exactly.
pub fn prolate_window(len: usize, time_bandwidth: f64) -> Result<Vec<f64>> {
    if len < 2 {
        return Err(Error::config("prolate window needs at least two samples"));
    }
    if !(time_bandwidth.is_finite()
        && time_bandwidth > 0.0
        && time_bandwidth < len as f64 / 2.0)
    {
        return Err(Error::config(
            "time-bandwidth product must lie in (0, len/2)",
        ));
    }
    let n = len as f64;
    let c = (2.0 * std::f64::consts::PI * time_bandwidth / n).cos();
    let diag: Vec<f64> = (0..len)
        .map(|i| {
            let d = (n - 1.0) / 2.0 - i as f64;
            d * d * c
        })
        .collect();
    let off: Vec<f64> = (1..len).map(|i| (i as f64) * (n - i as f64) / 2.0).collect();
    let (_, mut v) = tridiagonal_top_eigenpair(&diag, &off)?;
    let peak = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if peak == 0.0 {
        return Err(Error::numerical("prolate window collapsed to zero"));
    }
    for x in v.iter_mut() {
        *x /= peak;
    }
    Ok(v)
}

/// Normalized cumulative integral of the reference prolate window as a
/// spline over relative position r ∈ [0, 1]: the rising control-angle
/// profile shared by every synthesized pulse.
fn rise_profile() -> &'static CubicSpline {
    static PROFILE: OnceLock<CubicSpline> = OnceLock::new();
    PROFILE.get_or_init(|| {
        // Inputs are fixed compile-time constants, so neither construction
        // step has a reachable failure mode.
        let w = prolate_window(REFERENCE_GRID, TIME_BANDWIDTH)
            .expect("reference window construction is infallible");
        let h = 1.0 / (REFERENCE_GRID as f64 - 1.0);
        let mut cum = Vec::with_capacity(REFERENCE_GRID);
        cum.push(0.0);
        for k in 1..REFERENCE_GRID {
            cum.push(cum[k - 1] + 0.5 * (w[k] + w[k - 1]) * h);
        }
        let total = cum[REFERENCE_GRID - 1];
        let r: Vec<f64> = (0..REFERENCE_GRID).map(|k| k as f64 * h).collect();
        let ibar: Vec<f64> = cum.iter().map(|c| c / total).collect();
        CubicSpline::new(&r, &ibar).expect("reference grid is strictly increasing")
    })
}

/// Rising-edge value at relative position `r ∈ [0, 1]`: control angle from
/// the cumulative window profile, then the normalized `sqrt(cot θ)` mapping
/// with endpoints pinned to exactly 0 (r = 0) and 1 (r = 1).
fn rise_value(cfg: &SlepianConfig, r: f64) -> f64 {
    let ibar = rise_profile().eval(r).clamp(0.0, 1.0);
    let theta = cfg.theta_initial + (cfg.theta_final - cfg.theta_initial) * ibar;
    let w = (1.0 / theta.tan()).sqrt();
    let w0 = (1.0 / cfg.theta_initial.tan()).sqrt();
    let w1 = (1.0 / cfg.theta_final.tan()).sqrt();
    (w0 - w) / (w0 - w1)
}

/// Synthesize the unit-amplitude adiabatic flux pulse described by `cfg`.
///
/// The rising half follows `θ(t) = θᵢ + (θ_f − θᵢ)·∫₀ᵗS / ∫S` with `S` the
/// zeroth-order prolate window, mapped through the normalized `sqrt(cot θ)`
/// relation; the falling half mirrors it. First and last samples (and the
/// padding) are exactly zero and the peak is exactly one.
pub fn slepian_unit_pulse(cfg: &SlepianConfig) -> Result<Waveform> {
    cfg.validate()?;
    let intervals = cfg.interval_count();
    let n = intervals + 1;
    let half = (n + 1) / 2;
    let rise: Vec<f64> = (0..half)
        .map(|j| rise_value(cfg, j as f64 / (half as f64 - 1.0)))
        .collect();
    let pad = cfg.pad_samples();
    let mut samples = vec![0.0; n + 2 * pad];
    for j in 0..n {
        samples[pad + j] = rise[j.min(n - 1 - j)];
    }
    Waveform::new(samples, cfg.dt_ns, pad)
}

/// The synthesized pulse evaluated at `cfg.control_points` equally spaced
/// instants across the pulse: the seed vector for control-point optimizers.
pub fn slepian_control_points(cfg: &SlepianConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let k = cfg.control_points;
    Ok((0..k)
        .map(|i| {
            let tau = i as f64 / (k as f64 - 1.0);
            let r = if tau <= 0.5 { 2.0 * tau } else { 2.0 * (1.0 - tau) };
            rise_value(cfg, r)
        })
        .collect())
}

/// Build a waveform from control-point values by natural-cubic interpolation
/// onto the sample grid, reproducing how an arbitrary-waveform generator
/// renders a sparse pulse description. Knots sit at equally spaced instants
/// across the realized pulse duration; padding comes from `cfg`.
pub fn waveform_from_control_points(values: &[f64], cfg: &SlepianConfig) -> Result<Waveform> {
    cfg.validate()?;
    if values.len() < 4 {
        return Err(Error::config("at least four control points are required"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("control-point values must be finite"));
    }
    let intervals = cfg.interval_count();
    let n = intervals + 1;
    let realized = intervals as f64 * cfg.dt_ns;
    let k = values.len();
    let knots: Vec<f64> = (0..k)
        .map(|i| i as f64 * realized / (k as f64 - 1.0))
        .collect();
    let spline = CubicSpline::new(&knots, values)?;
    let pad = cfg.pad_samples();
    let mut samples = vec![0.0; n + 2 * pad];
    for j in 0..n {
        samples[pad + j] = spline.eval(j as f64 * cfg.dt_ns);
    }
    Waveform::new(samples, cfg.dt_ns, pad)
}

/// Shared one-pole filter core. `invert = false` applies the distortion,
/// `invert = true` solves the same recursion for the input that would have
/// produced `x`, which is the exact predistortion filter. Beyond the given
/// samples the input is held at its last value for `tail` further samples.
fn exponential_filter(
    x: &[f64],
    dt_ns: f64,
    terms: &[DistortionTerm],
    tail: usize,
    invert: bool,
) -> Vec<f64> {
    let poles: Vec<f64> = terms.iter().map(|t| (-dt_ns / t.tau_ns).exp()).collect();
    let amps: Vec<f64> = terms.iter().map(|t| t.a).collect();
    let a_sum: f64 = amps.iter().sum();
    let mut state = vec![0.0_f64; terms.len()];
    let mut prev = 0.0_f64;
    let total = x.len() + tail;
    let mut out = Vec::with_capacity(total);
    for j in 0..total {
        let sample = x[j.min(x.len() - 1)];
        if invert {
            // Solve y = x·(1 + Σaₖ) + Σ aₖ·pₖ·Fₖ − (Σaₖ)·prev for x.
            let decayed: f64 = amps
                .iter()
                .zip(&poles)
                .zip(&state)
                .map(|((a, p), f)| a * p * f)
                .sum();
            let solved = (sample - decayed + a_sum * prev) / (1.0 + a_sum);
            let delta = solved - prev;
            for (f, p) in state.iter_mut().zip(&poles) {
                *f = *p * *f + delta;
            }
            prev = solved;
            out.push(solved);
        } else {
            let delta = sample - prev;
            let mut acc = sample;
            for ((f, p), a) in state.iter_mut().zip(&poles).zip(&amps) {
                *f = *p * *f + delta;
                acc += a * *f;
            }
            prev = sample;
            out.push(acc);
        }
    }
    out
}

fn tail_samples(m: &DistortionModel, dt_ns: f64, tail_ns: f64) -> usize {
    if m.terms.is_empty() || tail_ns <= 0.0 {
        0
    } else {
        (tail_ns / dt_ns).ceil() as usize
    }
}

/// Pass `w` through the distortion model: the waveform's jumps convolved
/// with the step response, realized as exact per-term one-pole recursions.
/// The output is extended by five times the slowest time constant so the
/// transients are visible; see [`apply_distortion_with_tail`] to choose.
pub fn apply_distortion(w: &Waveform, m: &DistortionModel) -> Result<Waveform> {
    apply_distortion_with_tail(w, m, TAIL_TAU_FACTOR * m.max_tau_ns())
}

/// [`apply_distortion`] with an explicit decay-tail length in ns.
pub fn apply_distortion_with_tail(
    w: &Waveform,
    m: &DistortionModel,
    tail_ns: f64,
) -> Result<Waveform> {
    m.check_terms()?;
    if !(tail_ns.is_finite() && tail_ns >= 0.0) {
        return Err(Error::config("tail length must be non-negative"));
    }
    if w.samples.is_empty() {
        return Ok(w.clone());
    }
    let tail = tail_samples(m, w.dt_ns, tail_ns);
    let samples = exponential_filter(&w.samples, w.dt_ns, &m.terms, tail, false);
    Waveform::new(samples, w.dt_ns, 0)
}

/// Exact inverse of [`apply_distortion`]: the waveform which, after passing
/// through the model, reproduces `w`. Requires an invertible model (positive
/// step response). The output carries a compensation tail of five times the
/// slowest time constant by default; see [`predistort_with_tail`].
pub fn predistort(w: &Waveform, m: &DistortionModel) -> Result<Waveform> {
    predistort_with_tail(w, m, TAIL_TAU_FACTOR * m.max_tau_ns())
}

/// [`predistort`] with an explicit compensation-tail length in ns.
pub fn predistort_with_tail(
    w: &Waveform,
    m: &DistortionModel,
    tail_ns: f64,
) -> Result<Waveform> {
    m.validate()?;
    if !(tail_ns.is_finite() && tail_ns >= 0.0) {
        return Err(Error::config("tail length must be non-negative"));
    }
    if w.samples.is_empty() {
        return Ok(w.clone());
    }
    let tail = tail_samples(m, w.dt_ns, tail_ns);
    let samples = exponential_filter(&w.samples, w.dt_ns, &m.terms, tail, true);
    Waveform::new(samples, w.dt_ns, 0)
}

/// Phase accumulated by a flux-sensitive probe after a pulse of length
/// `pulse_duration_ns` has ended, evaluated on `t_grid_ns`:
///
/// `φ(t) = sensitivity · Σ aₖ·(exp(−t/τₖ) − exp(−(t + τ_pulse)/τₖ))`.
///
/// `sensitivity` collects the probe's frequency-to-flux slope and the pulse
/// amplitude into one prefactor (rad). This is the closed form fitted during
/// step-response calibration.
pub fn transient_phase(
    pulse_duration_ns: f64,
    m: &DistortionModel,
    sensitivity: f64,
    t_grid_ns: &[f64],
) -> Result<Vec<f64>> {
    m.check_terms()?;
    if !(pulse_duration_ns.is_finite() && pulse_duration_ns > 0.0) {
        return Err(Error::config("pulse duration must be positive"));
    }
    if !sensitivity.is_finite() {
        return Err(Error::config("sensitivity must be finite"));
    }
    if t_grid_ns.iter().any(|t| !t.is_finite()) {
        return Err(Error::config("time grid must be finite"));
    }
    Ok(t_grid_ns
        .iter()
        .map(|&t| {
            sensitivity
                * m.terms
                    .iter()
                    .map(|term| {
                        term.a
                            * ((-t / term.tau_ns).exp()
                                - (-(t + pulse_duration_ns) / term.tau_ns).exp())
                    })
                    .sum::<f64>()
        })
        .collect())
}
