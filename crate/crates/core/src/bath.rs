//! Harmonic bath with spectral density
//! `J_n(ω) = π λ / (n-1)! · (ω/ω_c)^n · e^{-ω/ω_c}` and its lineshape
//! function `C(t) = C_R(t) + i C_I(t)`.
//!
//! Internal units: ħ = 1 and ω_c = 1. Energies are in ħω_c, times in 1/ω_c
//! and θ = βħω_c is the dimensionless inverse temperature.
//!
//! Two independent routes evaluate `C(t)`:
//!
//! * closed forms: exact `C_I` and a four-term approximation of
//!   `coth(θω/2) ≈ 1 + 2e^{-θω} + 2e^{-2θω} + (2/θω) e^{-5θω/2}` for `C_R`;
//! * direct adaptive quadrature of the frequency integral with the exact
//!   `coth`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::quad::{integrate, integrate_breakpoints, IntegralResult, IntegralStatus};

/// Upper frequency limit of the lineshape quadrature. `e^{-40} ≈ 4e-18`.
pub const OMEGA_MAX: f64 = 40.0;

/// Below this argument `coth(x)` is replaced by `1/x + x/3`.
const COTH_SERIES_BELOW: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBath", into = "RawBath")]
pub struct BathModel {
    n: u8,
    lambda: f64,
    theta: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct RawBath {
    n: u8,
    lambda: f64,
    theta: f64,
}

impl TryFrom<RawBath> for BathModel {
    type Error = Error;
    fn try_from(raw: RawBath) -> Result<Self> {
        BathModel::new(raw.n, raw.lambda, raw.theta)
    }
}

impl From<BathModel> for RawBath {
    fn from(b: BathModel) -> Self {
        RawBath {
            n: b.n,
            lambda: b.lambda,
            theta: b.theta,
        }
    }
}

/// Long-time limit of `C_R(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LongTimeLimit {
    Finite(f64),
    Divergent,
}

impl LongTimeLimit {
    /// `e^{-C_{R,s}}`, zero when the limit diverges.
    pub fn residual_weight(self) -> f64 {
        match self {
            LongTimeLimit::Finite(c) => (-c).exp(),
            LongTimeLimit::Divergent => 0.0,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, LongTimeLimit::Finite(_))
    }
}

fn coth(x: f64) -> f64 {
    if x.abs() < COTH_SERIES_BELOW {
        1.0 / x + x / 3.0
    } else {
        1.0 / x.tanh()
    }
}

/// `∫₀^x atan(u) du`.
fn atan_integral(x: f64) -> f64 {
    x * x.atan() - 0.5 * (x * x).ln_1p()
}

impl BathModel {
    pub fn new(n: u8, lambda: f64, theta: f64) -> Result<Self> {
        if !(1..=3).contains(&n) {
            return Err(Error::Model(format!(
                "spectral density index n = {n} is not supported (expected 1, 2 or 3)"
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return validation(format!("reorganization energy must be positive, got {lambda}"));
        }
        if !(theta > 0.0 && theta.is_finite()) {
            return validation(format!("theta = βħω_c must be positive, got {theta}"));
        }
        Ok(Self { n, lambda, theta })
    }

    pub fn n(&self) -> u8 {
        self.n
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// k_B T in units of ħω_c.
    pub fn temperature(&self) -> f64 {
        1.0 / self.theta
    }

    fn factorial(&self) -> f64 {
        match self.n {
            1 | 2 => 1.0,
            _ => 2.0,
        }
    }

    pub fn spectral_density(&self, omega: f64) -> Result<f64> {
        if !(omega >= 0.0) {
            return validation(format!("frequency must be non-negative, got {omega}"));
        }
        Ok(PI * self.lambda / self.factorial() * omega.powi(self.n as i32) * (-omega).exp())
    }

    /// `(1/π) ∫₀^∞ J(ω)/ω dω` by adaptive quadrature.
    pub fn reorganization_energy(&self) -> Result<f64> {
        let f = |w: f64| {
            if w == 0.0 {
                0.0
            } else {
                self.spectral_density(w).unwrap_or(f64::NAN) / (PI * w)
            }
        };
        let abs_tol = 1e-13 * self.lambda;
        let (est, ok) = integrate_breakpoints(&f, &[0.0, 1.0, 4.0, 10.0, OMEGA_MAX], abs_tol, 1e-13, 400)?;
        // Tail of λ/(n-1)! ∫ ω^{n-1} e^{-ω} beyond OMEGA_MAX.
        let tail = self.lambda / self.factorial()
            * (-OMEGA_MAX).exp()
            * (0..self.n).map(|k| OMEGA_MAX.powi(k as i32)).sum::<f64>();
        if !ok {
            return Err(Error::NotConverged {
                what: "reorganization energy integral".into(),
                result: IntegralResult {
                    value: est.value,
                    error_estimate: est.error + tail,
                    t_truncation: OMEGA_MAX,
                    status: IntegralStatus::CapReached,
                },
            });
        }
        Ok(est.value + tail)
    }

    /// Exact `C_I(t)`.
    pub fn lineshape_imag_analytic(&self, t: f64) -> f64 {
        let tau = t;
        let s = 1.0 + tau * tau;
        self.lambda
            * match self.n {
                1 => tau.atan(),
                2 => tau / s,
                _ => tau / (s * s),
            }
    }

    /// `C_R(t)` from the four-term `coth` approximation, with
    /// `τ_s = ω_c t / (1 + sθ)` for `s ∈ {0, 1, 2, 5/2}`.
    pub fn lineshape_real_analytic(&self, t: f64) -> f64 {
        let th = self.theta;
        let a = |s: f64| 1.0 + s * th;
        let (a1, a2, a5) = (a(1.0), a(2.0), a(2.5));
        let (t0, t1, t2, t5) = (t, t / a1, t / a2, t / a5);
        let sq = |x: f64| x * x;
        let inner = match self.n {
            1 => {
                0.5 * sq(t0).ln_1p()
                    + sq(t1).ln_1p()
                    + sq(t2).ln_1p()
                    + 2.0 * a5 / th * atan_integral(t5)
            }
            2 => {
                let r = |x: f64| sq(x) / (1.0 + sq(x));
                r(t0) + 2.0 / a1 * r(t1) + 2.0 / a2 * r(t2) + sq(t5).ln_1p() / th
            }
            _ => {
                let q = |x: f64| {
                    let x2 = sq(x);
                    (x2 * x2 + 3.0 * x2) / sq(1.0 + x2)
                };
                let r = |x: f64| sq(x) / (1.0 + sq(x));
                0.5 * (q(t0) + 2.0 / sq(a1) * q(t1) + 2.0 / sq(a2) * q(t2))
                    + r(t5) / (th * a5)
            }
        };
        self.lambda * inner
    }

    pub fn lineshape_analytic(&self, t: f64) -> Complex64 {
        Complex64::new(self.lineshape_real_analytic(t), self.lineshape_imag_analytic(t))
    }

    /// `(1/π)·J(ω)/ω²`, i.e. `λ/(n-1)! · ω^{n-2} e^{-ω}`.
    fn weight(&self, w: f64) -> f64 {
        self.lambda / self.factorial() * w.powi(self.n as i32 - 2) * (-w).exp()
    }

    fn freq_integrand(&self, w: f64, t: f64) -> Complex64 {
        if w <= 0.0 {
            // ω → 0 limit: finite for every supported n.
            return match self.n {
                1 => Complex64::new(self.lambda * t * t / self.theta, self.lambda * t),
                _ => Complex64::new(0.0, 0.0),
            };
        }
        let s = (0.5 * w * t).sin();
        let pref = self.weight(w);
        Complex64::new(
            pref * coth(0.5 * self.theta * w) * 2.0 * s * s,
            pref * (w * t).sin(),
        )
    }

    fn tail_bound(&self) -> f64 {
        let w = OMEGA_MAX;
        let moment = match self.n {
            1 => (-w).exp() / w,
            2 => (-w).exp(),
            _ => (w + 1.0) * (-w).exp(),
        };
        self.lambda / self.factorial() * (2.0 * coth(0.5 * self.theta * w) + 1.0) * moment
    }

    /// `C(t)` from adaptive quadrature over `ω ∈ [0, OMEGA_MAX]` with the
    /// exact `coth`, together with its error estimate (including the
    /// analytic bound on the truncated frequency tail).
    pub fn lineshape_quadrature_estimate(&self, t: f64, tol: f64) -> Result<(Complex64, f64)> {
        if !(t >= 0.0) {
            return validation(format!("time must be non-negative, got {t}"));
        }
        if !(tol > 0.0) {
            return validation(format!("tolerance must be positive, got {tol}"));
        }
        if t == 0.0 {
            return Ok((Complex64::new(0.0, 0.0), 0.0));
        }
        let step = (PI / t).min(2.0);
        let pieces = (OMEGA_MAX / step).ceil() as usize;
        let mut breaks: Vec<f64> = (0..pieces).map(|i| i as f64 * step).collect();
        breaks.push(OMEGA_MAX);
        let f = |w: f64| self.freq_integrand(w, t);
        let abs_tol = tol * self.lambda;
        let (est, ok) = integrate_breakpoints(&f, &breaks, abs_tol, tol, 8 * pieces + 2000)?;
        let err = est.error + self.tail_bound();
        if !ok {
            return Err(Error::NotConverged {
                what: format!("lineshape quadrature at t = {t}"),
                result: IntegralResult {
                    value: est.value.re,
                    error_estimate: err,
                    t_truncation: OMEGA_MAX,
                    status: IntegralStatus::CapReached,
                },
            });
        }
        Ok((est.value, err))
    }

    pub fn lineshape_quadrature(&self, t: f64, tol: f64) -> Result<Complex64> {
        self.lineshape_quadrature_estimate(t, tol).map(|(v, _)| v)
    }

    /// Classification of `lim C_R(t)` for the closed-form route, decided
    /// from `(n, θ)`: divergent for n = 1, 2 and finite for n = 3.
    pub fn c_r_infinity(&self) -> LongTimeLimit {
        match self.n {
            1 | 2 => LongTimeLimit::Divergent,
            _ => {
                let th = self.theta;
                let sq = |x: f64| x * x;
                LongTimeLimit::Finite(
                    0.5 * self.lambda
                        * (1.0
                            + 2.0 / sq(1.0 + th)
                            + 2.0 / sq(1.0 + 2.0 * th)
                            + 2.0 / (th * (1.0 + 2.5 * th))),
                )
            }
        }
    }

    /// `lim C_R(t) = (1/π)∫ J(ω)/ω² coth(θω/2) dω` with the exact `coth`;
    /// only finite for n = 3.
    pub fn c_r_infinity_quadrature(&self, tol: f64) -> Result<LongTimeLimit> {
        if self.n != 3 {
            return Ok(LongTimeLimit::Divergent);
        }
        let f = |w: f64| {
            if w == 0.0 {
                2.0 * self.lambda / (self.factorial() * self.theta)
            } else {
                self.weight(w) * coth(0.5 * self.theta * w)
            }
        };
        let (est, ok) = integrate(&f, 0.0, OMEGA_MAX, tol * self.lambda, tol, 400)?;
        if !ok {
            return Err(Error::NotConverged {
                what: "long-time lineshape limit".into(),
                result: IntegralResult {
                    value: est.value,
                    error_estimate: est.error,
                    t_truncation: OMEGA_MAX,
                    status: IntegralStatus::CapReached,
                },
            });
        }
        Ok(LongTimeLimit::Finite(est.value + self.tail_bound()))
    }

    /// Bound on `|d⁴C/dt⁴|`, used to size interpolation grids.
    fn fourth_derivative_bound(&self) -> f64 {
        let n = self.n as i32;
        let fact = |k: i32| (1..=k).map(|i| i as f64).product::<f64>();
        self.lambda / self.factorial() * (fact(n + 2) + 2.0 * fact(n + 1) / self.theta)
    }
}

/// Which route evaluates `C(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LineshapeMethod {
    #[default]
    AnalyticCoth,
    Quadrature,
}

/// Cubic interpolation table of the quadrature lineshape on a uniform grid.
#[derive(Debug)]
struct LineshapeTable {
    step: f64,
    values: Vec<Complex64>,
    tol: f64,
}

impl LineshapeTable {
    /// Interpolation error target for tabulated lineshapes.
    const TARGET: f64 = 1e-9;

    fn build(bath: &BathModel, horizon: f64, tol: f64) -> Result<Self> {
        // 4-point Lagrange error ≤ (9/16)/24 · h⁴ · max|C''''|
        let h_max = (Self::TARGET / (0.0234375 * bath.fourth_derivative_bound())).powf(0.25);
        let step = h_max.min(0.05);
        let nodes = (horizon / step).ceil() as usize + 3;
        let values = (0..nodes)
            .into_par_iter()
            .map(|i| bath.lineshape_quadrature(i as f64 * step, tol))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { step, values, tol })
    }

    fn horizon(&self) -> f64 {
        (self.values.len() - 3) as f64 * self.step
    }

    fn eval(&self, t: f64) -> Option<Complex64> {
        let x = t / self.step;
        let last = self.values.len() - 1;
        let i = x.floor() as usize;
        if i + 2 > last {
            return None;
        }
        let base = i.max(1) - 1;
        let u = x - base as f64 - 1.0;
        let (p0, p1, p2, p3) = (
            self.values[base],
            self.values[base + 1],
            self.values[base + 2],
            self.values[base + 3],
        );
        // Lagrange basis on nodes -1, 0, 1, 2.
        let l0 = -u * (u - 1.0) * (u - 2.0) / 6.0;
        let l1 = (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0;
        let l2 = -(u + 1.0) * u * (u - 2.0) / 2.0;
        let l3 = (u + 1.0) * u * (u - 1.0) / 6.0;
        Some(p0 * l0 + p1 * l1 + p2 * l2 + p3 * l3)
    }
}

/// An evaluator for `C(t)` bound to one bath and one route.
///
/// Immutable after construction and cheap to clone; safe to share across
/// worker threads.
#[derive(Debug, Clone)]
pub struct Lineshape {
    bath: BathModel,
    method: LineshapeMethod,
    c_r_infinity: LongTimeLimit,
    table: Option<Arc<LineshapeTable>>,
}

impl Lineshape {
    pub fn analytic(bath: BathModel) -> Self {
        Self {
            bath,
            method: LineshapeMethod::AnalyticCoth,
            c_r_infinity: bath.c_r_infinity(),
            table: None,
        }
    }

    /// Tabulate the quadrature route on `[0, horizon]`.
    pub fn quadrature(bath: BathModel, horizon: f64, tol: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return validation(format!("lineshape horizon must be positive, got {horizon}"));
        }
        let table = LineshapeTable::build(&bath, horizon, tol)?;
        Ok(Self {
            bath,
            method: LineshapeMethod::Quadrature,
            c_r_infinity: bath.c_r_infinity_quadrature(tol)?,
            table: Some(Arc::new(table)),
        })
    }

    /// Tabulate the quadrature route up to the time where `e^{-C_R}` is
    /// negligible (divergent n = 1), or up to `fallback` otherwise.
    pub fn quadrature_auto(bath: BathModel, tol: f64, fallback: f64) -> Result<Self> {
        let horizon = if bath.n() == 1 {
            // C_R grows linearly for the Ohmic bath; the closed form is within
            // a fraction of a percent of the exact value.
            let mut t = 1.0;
            while bath.lineshape_real_analytic(t) < 45.0 && t < fallback {
                t *= 1.25;
            }
            t.min(fallback)
        } else {
            fallback
        };
        Self::quadrature(bath, horizon, tol)
    }

    pub fn new(bath: BathModel, method: LineshapeMethod, tol: f64, horizon: f64) -> Result<Self> {
        match method {
            LineshapeMethod::AnalyticCoth => Ok(Self::analytic(bath)),
            LineshapeMethod::Quadrature => Self::quadrature_auto(bath, tol, horizon),
        }
    }

    pub fn bath(&self) -> &BathModel {
        &self.bath
    }

    pub fn method(&self) -> LineshapeMethod {
        self.method
    }

    pub fn c_r_infinity(&self) -> LongTimeLimit {
        self.c_r_infinity
    }

    /// Longest time served from the table; infinite for closed forms.
    pub fn horizon(&self) -> f64 {
        self.table.as_ref().map_or(f64::INFINITY, |t| t.horizon())
    }

    /// `C(t)`. Beyond the tabulated horizon the quadrature is evaluated
    /// directly; a failure there yields NaN, which integrators report.
    pub fn eval(&self, t: f64) -> Complex64 {
        match &self.table {
            None => self.bath.lineshape_analytic(t),
            Some(table) => table.eval(t).unwrap_or_else(|| {
                self.bath
                    .lineshape_quadrature(t, table.tol)
                    .unwrap_or(Complex64::new(f64::NAN, f64::NAN))
            }),
        }
    }
}
