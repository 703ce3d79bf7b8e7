//! Gauss-Kronrod quadrature on finite intervals and a panel integrator for
//! semi-infinite oscillatory integrals of the form
//! `Re ∫₀^∞ e^{iωt} g(t) dt`.
//!
//! The oscillatory integrator walks `[0, t_cap]` in panels no wider than half
//! a period of `e^{iωt}`, integrates each with an embedded 7/15-point rule and
//! stops on one of three conditions:
//!
//! * the envelope stays below `abs_tol / 10` for three consecutive panels
//!   ([`IntegralStatus::Converged`]);
//! * the envelope still matters but is decaying, and the remainder can be
//!   estimated from the local behaviour of `g` (repeated integration by parts
//!   for oscillating phases, a power-law fit at zero frequency) to within the
//!   tolerance ([`IntegralStatus::TailDominated`]);
//! * `t_cap` is reached ([`IntegralStatus::CapReached`]). The partial value
//!   is returned as-is, no extrapolation is applied.

use std::collections::BinaryHeap;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Scalar types the quadrature rules can accumulate.
pub trait QuadValue:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> + Send + Sync
{
    fn zero() -> Self;
    fn magnitude(&self) -> f64;
    fn is_finite_value(&self) -> bool;
}

impl QuadValue for f64 {
    fn zero() -> Self {
        0.0
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
    fn is_finite_value(&self) -> bool {
        self.is_finite()
    }
}

impl QuadValue for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
    fn is_finite_value(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

/// Result of a finite-interval quadrature.
#[derive(Debug, Clone, Copy)]
pub struct Estimate<V> {
    pub value: V,
    pub error: f64,
}

fn rescale_error(err: f64, res_abs: f64, res_asc: f64) -> f64 {
    let mut scaled = err.abs();
    if res_asc != 0.0 && scaled != 0.0 {
        let scale = (200.0 * scaled / res_asc).powf(1.5);
        scaled = if scale < 1.0 { res_asc * scale } else { res_asc };
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        scaled = scaled.max(50.0 * f64::EPSILON * res_abs);
    }
    scaled
}

/// One application of the 7/15-point Gauss-Kronrod pair on `[a, b]`.
pub fn gk15<V, F>(f: &F, a: f64, b: f64) -> Result<Estimate<V>>
where
    V: QuadValue,
    F: Fn(f64) -> V,
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let eval = |t: f64| -> Result<V> {
        let v = f(t);
        if v.is_finite_value() {
            Ok(v)
        } else {
            Err(Error::NonFinite { t })
        }
    };

    let fc = eval(center)?;
    let mut res_k = fc * WGK[7];
    let mut res_g = fc * WG[3];
    let mut res_abs = fc.magnitude() * WGK[7];
    let mut values = [(V::zero(), V::zero()); 7];
    for (j, &x) in XGK.iter().take(7).enumerate() {
        let dx = half * x;
        let f1 = eval(center - dx)?;
        let f2 = eval(center + dx)?;
        values[j] = (f1, f2);
        res_k = res_k + (f1 + f2) * WGK[j];
        res_abs += WGK[j] * (f1.magnitude() + f2.magnitude());
        if j % 2 == 1 {
            res_g = res_g + (f1 + f2) * WG[j / 2];
        }
    }
    let mean = res_k * 0.5;
    let mut res_asc = WGK[7] * (fc - mean).magnitude();
    for (j, (f1, f2)) in values.iter().enumerate() {
        res_asc += WGK[j] * ((*f1 - mean).magnitude() + (*f2 - mean).magnitude());
    }
    let scale = half.abs();
    let err = (res_k - res_g).magnitude() * scale;
    Ok(Estimate {
        value: res_k * half,
        error: rescale_error(err, res_abs * scale, res_asc * scale),
    })
}

struct Segment<V> {
    a: f64,
    b: f64,
    est: Estimate<V>,
}

impl<V> PartialEq for Segment<V> {
    fn eq(&self, other: &Self) -> bool {
        self.est.error == other.est.error
    }
}
impl<V> Eq for Segment<V> {}
impl<V> PartialOrd for Segment<V> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<V> Ord for Segment<V> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.est.error.total_cmp(&other.est.error)
    }
}

/// Globally adaptive Gauss-Kronrod integration over the pieces delimited by
/// `breakpoints` (ascending, at least two entries).
///
/// Bisects the segment with the largest error until the summed error is
/// below `max(abs_tol, rel_tol·|I|)` or `max_segments` is exhausted.
pub fn integrate_breakpoints<V, F>(
    f: &F,
    breakpoints: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    max_segments: usize,
) -> Result<(Estimate<V>, bool)>
where
    V: QuadValue,
    F: Fn(f64) -> V,
{
    if breakpoints.len() < 2 {
        return validation("integration needs at least two breakpoints");
    }
    let mut heap = BinaryHeap::with_capacity(breakpoints.len() * 2);
    let mut total = V::zero();
    let mut total_err = 0.0;
    for w in breakpoints.windows(2) {
        let est = gk15(f, w[0], w[1])?;
        total = total + est.value;
        total_err += est.error;
        heap.push(Segment { a: w[0], b: w[1], est });
    }
    let mut segments = heap.len();
    loop {
        let tol = abs_tol.max(rel_tol * total.magnitude());
        if total_err <= tol {
            return Ok((Estimate { value: total, error: total_err }, true));
        }
        if segments >= max_segments {
            return Ok((Estimate { value: total, error: total_err }, false));
        }
        let worst = match heap.pop() {
            Some(s) => s,
            None => return Ok((Estimate { value: total, error: total_err }, false)),
        };
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Segment is at floating point resolution; keep it and stop refining.
            heap.push(worst);
            return Ok((Estimate { value: total, error: total_err }, false));
        }
        let left = gk15(f, worst.a, mid)?;
        let right = gk15(f, mid, worst.b)?;
        total = total - worst.est.value + left.value + right.value;
        total_err += left.error + right.error - worst.est.error;
        heap.push(Segment { a: worst.a, b: mid, est: left });
        heap.push(Segment { a: mid, b: worst.b, est: right });
        segments += 1;
    }
}

/// [`integrate_breakpoints`] on a single interval `[a, b]`.
pub fn integrate<V, F>(
    f: &F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_segments: usize,
) -> Result<(Estimate<V>, bool)>
where
    V: QuadValue,
    F: Fn(f64) -> V,
{
    integrate_breakpoints(f, &[a, b], abs_tol, rel_tol, max_segments)
}

/// Default absolute tolerance of the oscillatory integrator.
pub const DEFAULT_ABS_TOL: f64 = 1e-10;
/// Default relative tolerance of the oscillatory integrator.
pub const DEFAULT_REL_TOL: f64 = 1e-8;
/// Default hard truncation time, in units of 1/ω_c.
pub const DEFAULT_T_CAP: f64 = 1e4;
/// Default upper bound on the panel width, in units of 1/ω_c.
pub const DEFAULT_PANEL_WIDTH: f64 = 0.5;

/// Tolerances and truncation shared by every oscillatory integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadTolerances {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub t_cap: f64,
}

impl Default for QuadTolerances {
    fn default() -> Self {
        Self {
            abs_tol: DEFAULT_ABS_TOL,
            rel_tol: DEFAULT_REL_TOL,
            t_cap: DEFAULT_T_CAP,
        }
    }
}

impl QuadTolerances {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0 && self.t_cap > 0.0) {
            return validation(format!(
                "tolerances must be positive (abs_tol = {}, rel_tol = {}, t_cap = {})",
                self.abs_tol, self.rel_tol, self.t_cap
            ));
        }
        Ok(())
    }
}

/// A semi-infinite oscillatory integral `Re ∫₀^∞ e^{iωt} g(t) dt`.
#[derive(Clone)]
pub struct OscIntegralSpec<F> {
    /// ω, the oscillation rate of the phase factor.
    pub phase_frequency: f64,
    /// g(t), the non-oscillatory factor.
    pub envelope: F,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub t_cap: f64,
    /// Upper bound on panel width; the actual width is
    /// `min(π/|ω|, max_panel_width)`.
    pub max_panel_width: f64,
}

impl<F> OscIntegralSpec<F>
where
    F: Fn(f64) -> Complex64,
{
    pub fn new(phase_frequency: f64, envelope: F) -> Self {
        Self {
            phase_frequency,
            envelope,
            abs_tol: DEFAULT_ABS_TOL,
            rel_tol: DEFAULT_REL_TOL,
            t_cap: DEFAULT_T_CAP,
            max_panel_width: DEFAULT_PANEL_WIDTH,
        }
    }

    pub fn with_tolerances(mut self, tol: &QuadTolerances) -> Self {
        self.abs_tol = tol.abs_tol;
        self.rel_tol = tol.rel_tol;
        self.t_cap = tol.t_cap;
        self
    }

    pub fn with_panel_width(mut self, width: f64) -> Self {
        self.max_panel_width = width;
        self
    }

    fn panel_width(&self) -> f64 {
        let w = self.phase_frequency.abs();
        if w > 0.0 {
            (std::f64::consts::PI / w).min(self.max_panel_width)
        } else {
            self.max_panel_width
        }
    }
}

/// How an oscillatory integral terminated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntegralStatus {
    Converged,
    TailDominated,
    CapReached,
}

impl IntegralStatus {
    /// Both `Converged` and `TailDominated` carry an error estimate within
    /// tolerance.
    pub fn is_ok(self) -> bool {
        !matches!(self, IntegralStatus::CapReached)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            IntegralStatus::Converged => "converged",
            IntegralStatus::TailDominated => "tail_dominated",
            IntegralStatus::CapReached => "cap_reached",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegralResult {
    pub value: f64,
    pub error_estimate: f64,
    /// Time at which panel integration stopped.
    pub t_truncation: f64,
    pub status: IntegralStatus,
}

/// Envelope must decay by at least this factor per halving of `t` before a
/// tail estimate is trusted.
const TAIL_DECAY_RATIO: f64 = 0.8;
/// The phase must have turned over this many radians beyond `T` before the
/// integration-by-parts expansion is used.
const IBP_MIN_PHASE: f64 = 20.0;
const TAIL_CHECK_EVERY: usize = 4;

fn checked<F: Fn(f64) -> Complex64>(g: &F, t: f64) -> Result<Complex64> {
    let v = g(t);
    if v.re.is_finite() && v.im.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { t })
    }
}

/// Estimate `Re ∫_T^∞ e^{iωt} g(t) dt` together with an error bound, or
/// `None` when the envelope is not decaying or the local model is unusable.
fn tail_estimate<F: Fn(f64) -> Complex64>(
    g: &F,
    omega: f64,
    t: f64,
    t_cap: f64,
) -> Result<Option<(f64, f64)>> {
    let g_t = checked(g, t)?;
    let g_h = checked(g, 0.5 * t)?;
    let g_q = checked(g, 0.25 * t)?;
    let (m_t, m_h, m_q) = (g_t.norm(), g_h.norm(), g_q.norm());
    if m_t == 0.0 {
        return Ok(Some((0.0, 0.0)));
    }
    if !(m_t < TAIL_DECAY_RATIO * m_h && m_h < TAIL_DECAY_RATIO * m_q) {
        return Ok(None);
    }

    if omega.abs() * t >= IBP_MIN_PHASE {
        // ∫_T^∞ e^{iωt} g = -e^{iωT} Σ_k (-1)^k g^{(k)}(T) / (iω)^{k+1}
        let d = (0.05 * t).min(0.25);
        let gp = checked(g, t + d)?;
        let gm = checked(g, t - d)?;
        let g1 = (gp - gm) / (2.0 * d);
        let g2 = (gp - 2.0 * g_t + gm) / (d * d);
        let iw = Complex64::new(0.0, omega);
        let phase = Complex64::from_polar(1.0, omega * t);
        let series = g_t / iw - g1 / (iw * iw) + g2 / (iw * iw * iw);
        let tail = (-phase * series).re;
        // The series is asymptotic; the first omitted term is estimated from
        // the ratio of the last two included ones.
        let w = omega.abs();
        let term2 = g1.norm() / (w * w);
        let term3 = g2.norm() / (w * w * w);
        let ratio = if term2 > 0.0 { (term3 / term2).min(1.0) } else { 1.0 };
        let next = term3 * ratio;
        return Ok(Some((tail, next)));
    }

    if omega.abs() * t_cap < IBP_MIN_PHASE {
        // Effectively zero frequency: fit g ~ t^{-p} on [T/4, T].
        let p_near = (m_h / m_t).log2();
        let p_far = (m_q / m_h).log2();
        if p_near <= 1.2 || p_far <= 1.2 {
            return Ok(None);
        }
        let re = (Complex64::from_polar(1.0, omega * t) * g_t).re;
        let tail = re * t / (p_near - 1.0);
        let alt = re * t / (p_far - 1.0);
        return Ok(Some((tail, (tail - alt).abs())));
    }
    Ok(None)
}

/// Evaluate `Re ∫₀^∞ e^{iωt} g(t) dt` panel by panel.
///
/// Errors only when the envelope produces a non-finite value or the
/// tolerances are invalid. Non-decaying integrands come back as
/// [`IntegralStatus::CapReached`] with the partial value.
pub fn integrate_oscillatory<F>(spec: &OscIntegralSpec<F>) -> Result<IntegralResult>
where
    F: Fn(f64) -> Complex64,
{
    QuadTolerances {
        abs_tol: spec.abs_tol,
        rel_tol: spec.rel_tol,
        t_cap: spec.t_cap,
    }
    .validate()?;
    if !(spec.max_panel_width > 0.0) {
        return validation("panel width must be positive");
    }
    if !spec.phase_frequency.is_finite() {
        return validation("phase frequency must be finite");
    }

    let omega = spec.phase_frequency;
    let g = &spec.envelope;
    let integrand = |t: f64| (Complex64::from_polar(1.0, omega * t) * g(t)).re;
    let width = spec.panel_width();
    let quiet_level = spec.abs_tol / 10.0;
    let tail_start = (20.0 * width).max(10.0);

    let mut value: f64 = 0.0;
    let mut error = 0.0;
    let mut quiet = 0usize;
    let mut a = 0.0;
    let mut panel = 0usize;
    let mut last_corrected: Option<f64> = None;

    loop {
        let b = (a + width).min(spec.t_cap);
        let panel_tol = 1e-3 * spec.abs_tol.max(spec.rel_tol * value.abs());
        let (est, _) = integrate(&integrand, a, b, panel_tol, 0.1 * spec.rel_tol, 64)?;
        value += est.value;
        error += est.error;
        panel += 1;

        let tol = spec.abs_tol.max(spec.rel_tol * value.abs());
        let g_end = checked(g, b)?;
        if g_end.norm() < quiet_level {
            quiet += 1;
        } else {
            quiet = 0;
        }
        if quiet >= 3 {
            error += g_end.norm() * width;
            let status = if error <= tol {
                IntegralStatus::Converged
            } else {
                IntegralStatus::CapReached
            };
            return Ok(IntegralResult {
                value,
                error_estimate: error,
                t_truncation: b,
                status,
            });
        }
        if b >= spec.t_cap {
            return Ok(IntegralResult {
                value,
                error_estimate: error,
                t_truncation: b,
                status: IntegralStatus::CapReached,
            });
        }
        if b >= tail_start && panel.is_multiple_of(TAIL_CHECK_EVERY) {
            if let Some((tail, tail_err)) = tail_estimate(g, omega, b, spec.t_cap)? {
                let corrected = value + tail;
                let drift = last_corrected.map_or(f64::INFINITY, |prev| (corrected - prev).abs());
                last_corrected = Some(corrected);
                let total_err = error + tail_err.max(drift.min(tail.abs()));
                let tol = spec.abs_tol.max(spec.rel_tol * corrected.abs());
                if total_err <= 0.5 * tol {
                    return Ok(IntegralResult {
                        value: corrected,
                        error_estimate: total_err,
                        t_truncation: b,
                        status: IntegralStatus::TailDominated,
                    });
                }
            }
        }
        a = b;
    }
}
