//! Golden-rule rate expressions for a harmonic bath.
//!
//! All variants share the time integral
//! `k = 2|J|² Re ∫₀^∞ dt e^{iΔẼt} G(t)` and differ only in the envelope
//! `G(t)`:
//!
//! | variant            | envelope                                   |
//! |--------------------|--------------------------------------------|
//! | damped FGR         | `e^{-C(t)} e^{-γ_d t}`                     |
//! | m-FGR-1            | `e^{-C(t)} - e^{-C_{R,s}}`                 |
//! | disorder average   | `e^{-C(t)} χ(t)`, χ the disorder char. fn. |
//! | m-FGR-2            | `e^{-C(t)} D_KA(t) e^{-t/τ_f}`             |
//!
//! where `D_KA(t) = exp{-(t/τ_e - 1 + e^{-t/τ_e}) ⟨δE²⟩ τ_e²}` is the
//! Kubo-Anderson factor of Gaussian, exponentially correlated gap noise.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bath::{BathModel, Lineshape};
use crate::error::{validation, Error, Result};
use crate::quad::{integrate, integrate_breakpoints, integrate_oscillatory, IntegralResult, OscIntegralSpec, QuadTolerances};

/// Static distribution of the final-state energy around its nominal value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisorderModel {
    Gaussian { sigma: f64 },
    Lorentzian { gamma: f64 },
}

impl DisorderModel {
    pub fn validate(&self) -> Result<()> {
        let (name, w) = match *self {
            DisorderModel::Gaussian { sigma } => ("sigma", sigma),
            DisorderModel::Lorentzian { gamma } => ("gamma", gamma),
        };
        if !(w > 0.0 && w.is_finite()) {
            return validation(format!("disorder width {name} must be positive, got {w}"));
        }
        Ok(())
    }

    /// Characteristic function of the distribution at time `t`.
    pub fn characteristic(&self, t: f64) -> f64 {
        match *self {
            DisorderModel::Gaussian { sigma } => (-0.5 * sigma * sigma * t * t).exp(),
            DisorderModel::Lorentzian { gamma } => (-gamma * t).exp(),
        }
    }

    /// Probability density at offset `x` from the nominal energy.
    pub fn density(&self, x: f64) -> f64 {
        match *self {
            DisorderModel::Gaussian { sigma } => {
                (-0.5 * (x / sigma).powi(2)).exp() / ((2.0 * PI).sqrt() * sigma)
            }
            DisorderModel::Lorentzian { gamma } => gamma / (PI * (x * x + gamma * gamma)),
        }
    }
}

/// Gaussian, exponentially correlated gap noise plus exponentially
/// correlated multiplicative coupling noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluctuationModel {
    /// Correlation time of the gap noise, 1/ω_c.
    pub tau_e: f64,
    /// Variance of the gap noise, (ħω_c)².
    pub de_sq: f64,
    /// Correlation time of the coupling noise; `None` means no coupling noise.
    pub tau_f: Option<f64>,
}

impl FluctuationModel {
    /// Build from the dimensionless rates `γ_e = 1/(ω_c τ_e)` and
    /// `γ_f = 1/(ω_c τ_f)`; `γ_f = 0` switches coupling noise off.
    pub fn from_rates(gamma_e: f64, de_sq: f64, gamma_f: f64) -> Result<Self> {
        if !(gamma_e > 0.0) {
            return validation(format!("gamma_e must be positive, got {gamma_e}"));
        }
        if !(gamma_f >= 0.0) {
            return validation(format!("gamma_f must be non-negative, got {gamma_f}"));
        }
        let m = Self {
            tau_e: 1.0 / gamma_e,
            de_sq,
            tau_f: (gamma_f > 0.0).then(|| 1.0 / gamma_f),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_e > 0.0 && self.tau_e.is_finite()) {
            return validation(format!("tau_e must be positive, got {}", self.tau_e));
        }
        if !(self.de_sq >= 0.0 && self.de_sq.is_finite()) {
            return validation(format!("<dE^2> must be non-negative, got {}", self.de_sq));
        }
        if let Some(tf) = self.tau_f {
            if !(tf > 0.0) {
                return validation(format!("tau_f must be positive or absent, got {tf}"));
            }
        }
        Ok(())
    }

    /// Exponent `(x - 1 + e^{-x}) ⟨δE²⟩ τ_e²` with `x = t/τ_e`.
    pub fn gap_exponent(&self, t: f64) -> f64 {
        let x = t / self.tau_e;
        let shape = if x < 1e-3 {
            x * x * (0.5 - x / 6.0 + x * x / 24.0)
        } else {
            x + (-x).exp_m1()
        };
        shape * self.de_sq * self.tau_e * self.tau_e
    }

    /// Kubo-Anderson damping factor times the coupling-noise decay.
    pub fn damping(&self, t: f64) -> f64 {
        let coupling = self.tau_f.map_or(0.0, |tf| t / tf);
        (-self.gap_exponent(t) - coupling).exp()
    }
}

/// Which rate expression a [`RateSpec`] selects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum RateVariant {
    /// Regularized rate with the non-decaying component removed.
    #[default]
    MFgr1,
    /// Conventional rate with an artificial `e^{-γ_d t}` convergence factor.
    Damped { gamma_d: f64 },
    /// Conventional rate averaged over static final-state disorder.
    Disorder { disorder: DisorderModel },
    /// Fluctuation-averaged rate.
    Fluctuation { fluctuation: FluctuationModel },
}

impl RateVariant {
    pub fn kind(&self) -> VariantKind {
        match self {
            RateVariant::MFgr1 => VariantKind::MFgr1,
            RateVariant::Damped { .. } => VariantKind::Damped,
            RateVariant::Disorder { .. } => VariantKind::DisorderAveraged,
            RateVariant::Fluctuation { .. } => VariantKind::MFgr2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            RateVariant::MFgr1 => Ok(()),
            RateVariant::Damped { gamma_d } => {
                if *gamma_d > 0.0 && gamma_d.is_finite() {
                    Ok(())
                } else {
                    validation(format!("gamma_d must be positive, got {gamma_d}"))
                }
            }
            RateVariant::Disorder { disorder } => disorder.validate(),
            RateVariant::Fluctuation { fluctuation } => fluctuation.validate(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    MFgr1,
    Damped,
    DisorderAveraged,
    MFgr2,
}

/// One rate evaluation request. Energies in ħω_c.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSpec {
    /// ΔẼ = Ẽ₁ - Ẽ₂.
    pub delta_e: f64,
    /// |J|².
    pub j_sq: f64,
    #[serde(flatten)]
    pub variant: RateVariant,
}

impl RateSpec {
    pub fn new(delta_e: f64, j_sq: f64, variant: RateVariant) -> Self {
        Self { delta_e, j_sq, variant }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.delta_e.is_finite() {
            return validation(format!("energy gap must be finite, got {}", self.delta_e));
        }
        if !(self.j_sq > 0.0 && self.j_sq.is_finite()) {
            return validation(format!("|J|^2 must be positive, got {}", self.j_sq));
        }
        self.variant.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    /// Rate in units of ω_c.
    pub k: f64,
    /// Dimensionless `κ = √(k_B T λ)/(√π |J|²) k`.
    pub kappa: f64,
    /// Weight `2π|J|² e^{-C_{R,s}}` of the omitted delta term (m-FGR-1 only,
    /// zero otherwise). Never included in `k`.
    pub delta_weight: f64,
    /// Independent second evaluation, where the variant has one
    /// (disorder average: regularized rate averaged over the distribution
    /// plus the delta term).
    pub decomposed: Option<f64>,
    pub diagnostics: IntegralResult,
    pub variant: VariantKind,
}

/// `κ = √(λ/θ)/(√π |J|²) · k` in internal units.
pub fn kappa_normalize(k: f64, bath: &BathModel, j_sq: f64) -> f64 {
    (bath.lambda() * bath.temperature()).sqrt() / (PI.sqrt() * j_sq) * k
}

/// Rate evaluator bound to one lineshape. Cheap to clone and share.
#[derive(Debug, Clone)]
pub struct RateEngine {
    lineshape: Lineshape,
    tol: QuadTolerances,
}

/// Tolerances for the inner regularized rates of the decomposed disorder
/// route, and for the outer average over the distribution.
const DECOMPOSED_INNER: QuadTolerances = QuadTolerances { abs_tol: 1e-9, rel_tol: 1e-7, t_cap: 1e4 };
const DECOMPOSED_OUTER_REL: f64 = 1e-5;

impl RateEngine {
    pub fn new(lineshape: Lineshape, tol: QuadTolerances) -> Result<Self> {
        tol.validate()?;
        Ok(Self { lineshape, tol })
    }

    pub fn analytic(bath: BathModel) -> Self {
        Self {
            lineshape: Lineshape::analytic(bath),
            tol: QuadTolerances::default(),
        }
    }

    pub fn lineshape(&self) -> &Lineshape {
        &self.lineshape
    }

    pub fn bath(&self) -> &BathModel {
        self.lineshape.bath()
    }

    pub fn tolerances(&self) -> &QuadTolerances {
        &self.tol
    }

    fn effective_tol(&self, tol: &QuadTolerances) -> QuadTolerances {
        QuadTolerances {
            t_cap: tol.t_cap.min(self.lineshape.horizon()),
            ..*tol
        }
    }

    fn kernel(&self, t: f64) -> Complex64 {
        (-self.lineshape.eval(t)).exp()
    }

    fn run<F>(&self, delta_e: f64, tol: &QuadTolerances, envelope: F) -> Result<IntegralResult>
    where
        F: Fn(f64) -> Complex64,
    {
        let spec = OscIntegralSpec::new(delta_e, envelope).with_tolerances(&self.effective_tol(tol));
        integrate_oscillatory(&spec)
    }

    fn finish(&self, what: &str, j_sq: f64, r: IntegralResult, variant: VariantKind) -> Result<RateResult> {
        if !r.status.is_ok() {
            return Err(Error::NotConverged {
                what: what.to_string(),
                result: IntegralResult {
                    value: 2.0 * j_sq * r.value,
                    error_estimate: 2.0 * j_sq * r.error_estimate,
                    ..r
                },
            });
        }
        let k = 2.0 * j_sq * r.value;
        Ok(RateResult {
            k,
            kappa: kappa_normalize(k, self.bath(), j_sq),
            delta_weight: 0.0,
            decomposed: None,
            diagnostics: r,
            variant,
        })
    }

    /// Dispatch on the variant selected by `spec`.
    pub fn evaluate(&self, spec: &RateSpec) -> Result<RateResult> {
        spec.validate()?;
        match spec.variant {
            RateVariant::MFgr1 => self.m_fgr_1(spec.delta_e, spec.j_sq),
            RateVariant::Damped { gamma_d } => self.fgr_damped(spec.delta_e, spec.j_sq, gamma_d),
            RateVariant::Disorder { disorder } => self.fgr_disorder_avg(spec.delta_e, spec.j_sq, disorder),
            RateVariant::Fluctuation { fluctuation } => self.m_fgr_2(spec.delta_e, spec.j_sq, fluctuation),
        }
    }

    /// Long-time rate with the artificial convergence factor `e^{-γ_d t}`.
    pub fn fgr_damped(&self, delta_e: f64, j_sq: f64, gamma_d: f64) -> Result<RateResult> {
        RateSpec::new(delta_e, j_sq, RateVariant::Damped { gamma_d }).validate()?;
        let r = self.run(delta_e, &self.tol, |t| self.kernel(t) * (-gamma_d * t).exp())?;
        self.finish("damped golden-rule rate", j_sq, r, VariantKind::Damped)
    }

    fn m_fgr_1_with(&self, delta_e: f64, j_sq: f64, tol: &QuadTolerances) -> Result<RateResult> {
        let residual = self.lineshape.c_r_infinity().residual_weight();
        let r = self.run(delta_e, tol, |t| self.kernel(t) - residual)?;
        let mut out = self.finish("regularized golden-rule rate", j_sq, r, VariantKind::MFgr1)?;
        out.delta_weight = 2.0 * PI * j_sq * residual;
        Ok(out)
    }

    /// Regularized rate: the non-decaying part `e^{-C_{R,s}}` of the
    /// integrand is subtracted. For divergent `C_R` this is the plain
    /// long-time rate.
    pub fn m_fgr_1(&self, delta_e: f64, j_sq: f64) -> Result<RateResult> {
        RateSpec::new(delta_e, j_sq, RateVariant::MFgr1).validate()?;
        self.m_fgr_1_with(delta_e, j_sq, &self.tol)
    }

    /// Rate averaged over static disorder of the final-state energy.
    ///
    /// `k` comes from inserting the characteristic function into the time
    /// integrand. `decomposed` is the regularized rate averaged over the
    /// distribution by quadrature plus `2π|J|² e^{-C_{R,s}} ρ_f(Ẽ₁)`.
    pub fn fgr_disorder_avg(&self, delta_e: f64, j_sq: f64, disorder: DisorderModel) -> Result<RateResult> {
        RateSpec::new(delta_e, j_sq, RateVariant::Disorder { disorder }).validate()?;
        let r = self.run(delta_e, &self.tol, |t| self.kernel(t) * disorder.characteristic(t))?;
        let mut out = self.finish("disorder-averaged rate", j_sq, r, VariantKind::DisorderAveraged)?;
        out.decomposed = Some(self.disorder_decomposed(delta_e, j_sq, disorder)?);
        Ok(out)
    }

    fn disorder_decomposed(&self, delta_e: f64, j_sq: f64, disorder: DisorderModel) -> Result<f64> {
        // Failures inside the outer quadrature surface as NaN and are
        // re-raised below with their own diagnostics.
        let inner = |gap: f64| -> f64 {
            self.m_fgr_1_with(gap, j_sq, &DECOMPOSED_INNER)
                .map(|r| r.k)
                .unwrap_or(f64::NAN)
        };
        let averaged = match disorder {
            DisorderModel::Gaussian { sigma } => {
                // Ẽ₂ offset x ~ N(0, σ²); the regularized rate has a cusp at
                // zero gap, i.e. at x = ΔẼ.
                let lo = -8.0 * sigma;
                let hi = 8.0 * sigma;
                let mut breaks = vec![lo];
                if delta_e > lo && delta_e < hi {
                    breaks.push(delta_e);
                }
                breaks.push(hi);
                let f = |x: f64| inner(delta_e - x) * disorder.density(x);
                integrate_breakpoints(&f, &breaks, 1e-12, DECOMPOSED_OUTER_REL, 200)
            }
            DisorderModel::Lorentzian { gamma } => {
                // x = Γ tan φ maps the Cauchy density to dφ/π on (-π/2, π/2).
                let edge = 0.5 * PI * (1.0 - 1e-9);
                let cusp = (delta_e / gamma).atan();
                let f = |phi: f64| inner(delta_e - gamma * phi.tan()) / PI;
                integrate_breakpoints(&f, &[-edge, cusp, edge], 1e-12, DECOMPOSED_OUTER_REL, 200)
            }
        };
        let (est, ok) = averaged.map_err(|e| match e {
            Error::NonFinite { t } => Error::Validation(format!(
                "regularized rate failed at gap {t} inside the disorder average"
            )),
            other => other,
        })?;
        if !ok {
            return Err(Error::NotConverged {
                what: "disorder average of the regularized rate".into(),
                result: IntegralResult {
                    value: est.value,
                    error_estimate: est.error,
                    t_truncation: f64::NAN,
                    status: crate::quad::IntegralStatus::CapReached,
                },
            });
        }
        let residual = self.lineshape.c_r_infinity().residual_weight();
        Ok(est.value + 2.0 * PI * j_sq * residual * disorder.density(delta_e))
    }

    /// Fluctuation-averaged rate with the Kubo-Anderson damping factor.
    /// `delta_e` is the mean gap.
    pub fn m_fgr_2(&self, delta_e: f64, j_sq: f64, fluctuation: FluctuationModel) -> Result<RateResult> {
        RateSpec::new(delta_e, j_sq, RateVariant::Fluctuation { fluctuation }).validate()?;
        let r = self.run(delta_e, &self.tol, |t| self.kernel(t) * fluctuation.damping(t))?;
        self.finish("fluctuation-averaged rate", j_sq, r, VariantKind::MFgr2)
    }

    /// Finite-time rate `k(t) = 2|J|² Re ∫₀^t e^{iΔẼτ - C(τ)} D(τ) dτ` on an
    /// ascending grid, where `D` is the variant's damping factor (1 for
    /// m-FGR-1, i.e. no subtraction: this is the unregularized k(t)).
    /// Fluctuation-averaged specs are rejected.
    pub fn rate_vs_time(&self, spec: &RateSpec, t_grid: &[f64]) -> Result<Vec<f64>> {
        spec.validate()?;
        let damping: Box<dyn Fn(f64) -> f64 + Sync> = match spec.variant {
            RateVariant::MFgr1 => Box::new(|_| 1.0),
            RateVariant::Damped { gamma_d } => Box::new(move |t| (-gamma_d * t).exp()),
            RateVariant::Disorder { disorder } => Box::new(move |t| disorder.characteristic(t)),
            RateVariant::Fluctuation { .. } => {
                return validation("finite-time rates need a time-independent Hamiltonian; use the stochastic module for fluctuations")
            }
        };
        if let Some(w) = t_grid.windows(2).find(|w| !(w[1] >= w[0])) {
            return validation(format!("time grid must be ascending ({} then {})", w[0], w[1]));
        }
        if t_grid.first().is_some_and(|&t| !(t >= 0.0)) {
            return validation("time grid must start at t >= 0");
        }
        let w = spec.delta_e;
        let f = |t: f64| (Complex64::from_polar(1.0, w * t) * self.kernel(t)).re * damping(t);
        let width = if w != 0.0 { (PI / w.abs()).min(0.5) } else { 0.5 };
        let mut out = Vec::with_capacity(t_grid.len());
        let mut acc = 0.0;
        let mut prev = 0.0;
        for &t in t_grid {
            if t > prev {
                let pieces = ((t - prev) / width).ceil().max(1.0) as usize;
                let h = (t - prev) / pieces as f64;
                let breaks: Vec<f64> = (0..=pieces).map(|i| prev + i as f64 * h).collect();
                let (est, _) = integrate_breakpoints(&f, &breaks, 1e-13, 1e-12, 4 * pieces + 50)?;
                acc += est.value;
                prev = t;
            }
            out.push(2.0 * spec.j_sq * acc);
        }
        Ok(out)
    }
}

/// `Re ∫₀^T f` helper used by tests of the finite-time rate.
#[doc(hidden)]
pub fn plain_integral<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<f64> {
    Ok(integrate(f, a, b, 1e-13, 1e-12, 2000)?.0.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn engine(n: u8, theta: f64) -> RateEngine {
        RateEngine::analytic(BathModel::new(n, 1.0, theta).unwrap())
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn kappa_normalization() {
        let b = BathModel::new(1, 2.0, 0.5).unwrap();
        assert_eq!(kappa_normalize(0.0, &b, 1.0), 0.0);
        assert_abs_diff_eq!(kappa_normalize(3.0, &b, 0.5), (4.0f64).sqrt() / (PI.sqrt() * 0.5) * 3.0, epsilon = 1e-14);
    }

    #[test]
    fn ohmic_regularization_is_identity() {
        let e = engine(1, 1.0);
        for gap in [-1.0, 0.0, 0.7, 2.0] {
            let m = e.m_fgr_1(gap, 1.0).unwrap();
            assert_eq!(m.delta_weight, 0.0);
            let plain = e
                .run(gap, &QuadTolerances::default(), |t| e.kernel(t))
                .unwrap();
            assert_abs_diff_eq!(m.k, 2.0 * plain.value, epsilon = 1e-12);
        }
    }

    #[test]
    fn delta_weight_super_ohmic() {
        let e = engine(3, 1.0);
        let m = e.m_fgr_1(2.0, 0.3).unwrap();
        let cs: f64 = 0.5 * (1.0 + 0.5 + 2.0 / 9.0 + 2.0 / 3.5);
        assert_abs_diff_eq!(m.delta_weight, 2.0 * PI * 0.3 * (-cs).exp(), epsilon = 1e-14);
    }

    #[test]
    fn unregularized_super_ohmic_is_not_fabricated() {
        // n = 3 without any damping never decays.
        let e = engine(3, 1.0);
        let r = e
            .run(0.0, &QuadTolerances { t_cap: 300.0, ..Default::default() }, |t| e.kernel(t))
            .unwrap();
        assert_eq!(r.status, crate::quad::IntegralStatus::CapReached);
    }

    #[test]
    fn fluctuation_without_noise_reduces_to_regularized_rate() {
        let e = engine(1, 1.0);
        let fl = FluctuationModel { tau_e: 1.0, de_sq: 0.0, tau_f: None };
        for gap in [-2.0, 0.0, 1.0, 3.0] {
            let a = e.m_fgr_2(gap, 1.0, fl).unwrap().k;
            let b = e.m_fgr_1(gap, 1.0).unwrap().k;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn lorentzian_disorder_equals_damping() {
        let e = engine(3, 1.0);
        for gap in [-1.0, 0.0, 0.5, 2.0] {
            let a = e.fgr_disorder_avg(gap, 1.0, DisorderModel::Lorentzian { gamma: 0.1 }).unwrap();
            let b = e.fgr_damped(gap, 1.0, 0.1).unwrap();
            assert_eq!(a.k, b.k);
        }
    }

    #[test]
    fn narrow_gaussian_disorder_reaches_sharp_limit() {
        let e = engine(1, 1.0);
        for gap in [0.0, 1.0, 2.5] {
            let a = e.fgr_disorder_avg(gap, 1.0, DisorderModel::Gaussian { sigma: 1e-6 }).unwrap();
            let b = e.m_fgr_1(gap, 1.0).unwrap();
            assert!(rel(a.k, b.k) < 1e-4);
        }
    }

    #[test]
    fn gaussian_disorder_two_routes() {
        let e = engine(3, 1.0);
        let r = e.fgr_disorder_avg(1.0, 1.0, DisorderModel::Gaussian { sigma: 0.2 }).unwrap();
        assert!(rel(r.decomposed.unwrap(), r.k) < 5e-3, "{} vs {}", r.k, r.decomposed.unwrap());
    }

    #[test]
    fn damping_approaches_regularized_rate() {
        let e = engine(1, 1.0);
        let m = e.m_fgr_1(2.0, 1.0).unwrap().k;
        let d = e.fgr_damped(2.0, 1.0, 1e-4).unwrap().k;
        assert!(rel(d, m) <= 1e-3);

        let e3 = engine(3, 1.0);
        let d = e3.fgr_damped(2.0, 1.0, 0.1).unwrap();
        assert!(d.k > 0.0 && d.k.is_finite());
        let near = e3.fgr_damped(0.0, 1.0, 0.01).unwrap().kappa;
        let far = e3.fgr_damped(0.0, 1.0, 0.1).unwrap().kappa;
        assert!(near > far);
    }

    #[test]
    fn finite_time_rate_starts_at_zero() {
        let e = engine(3, 1.0);
        let k = e.rate_vs_time(&RateSpec::new(0.0, 1.0, RateVariant::MFgr1), &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(k[0], 0.0);
        assert!(k[1] > 0.0);
    }

    #[test]
    fn finite_time_rate_matches_direct_integral() {
        let e = engine(1, 1.0);
        let grid: Vec<f64> = (0..=40).map(|i| i as f64 * 0.25).collect();
        let k = e.rate_vs_time(&RateSpec::new(0.8, 0.5, RateVariant::MFgr1), &grid).unwrap();
        let f = |t: f64| (Complex64::from_polar(1.0, 0.8 * t) * (-e.bath().lineshape_analytic(t)).exp()).re;
        let direct = plain_integral(&f, 0.0, 10.0).unwrap();
        assert_abs_diff_eq!(k[40], 2.0 * 0.5 * direct, epsilon = 1e-11);
    }

    #[test]
    fn finite_time_rate_rejects_fluctuations() {
        let e = engine(1, 1.0);
        let spec = RateSpec::new(
            0.0,
            1.0,
            RateVariant::Fluctuation { fluctuation: FluctuationModel { tau_e: 1.0, de_sq: 0.1, tau_f: None } },
        );
        assert!(e.rate_vs_time(&spec, &[0.0, 1.0]).is_err());
        let bad = RateSpec::new(0.0, 1.0, RateVariant::MFgr1);
        assert!(e.rate_vs_time(&bad, &[1.0, 0.5]).is_err());
    }

    #[test]
    fn validation_errors() {
        let e = engine(1, 1.0);
        assert!(e.m_fgr_1(0.0, 0.0).is_err());
        assert!(e.fgr_damped(0.0, 1.0, 0.0).is_err());
        assert!(e.fgr_disorder_avg(0.0, 1.0, DisorderModel::Gaussian { sigma: -1.0 }).is_err());
        assert!(FluctuationModel::from_rates(0.0, 0.1, 0.0).is_err());
        assert!(FluctuationModel::from_rates(1.0, -0.1, 0.0).is_err());
        assert_eq!(FluctuationModel::from_rates(2.0, 0.1, 0.0).unwrap().tau_f, None);
    }

    #[test]
    fn kubo_exponent_limits() {
        let slow = FluctuationModel { tau_e: 1e3, de_sq: 0.1, tau_f: None };
        assert!(rel(slow.gap_exponent(2.0), 0.5 * 0.1 * 4.0) < 1e-3);
        let fast = FluctuationModel { tau_e: 1e-3, de_sq: 0.1, tau_f: None };
        assert!(rel(fast.gap_exponent(50.0), 1e-3 * 0.1 * 50.0) < 1e-3);
        assert_eq!(slow.gap_exponent(0.0), 0.0);
    }

    #[test]
    fn serde_shape() {
        let spec = RateSpec::new(
            1.0,
            0.5,
            RateVariant::Disorder { disorder: DisorderModel::Gaussian { sigma: 0.2 } },
        );
        let s = serde_json::to_string(&spec).unwrap();
        let back: RateSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, spec);
    }
}
