//! Monte Carlo validation of the fluctuation-averaged rates.
//!
//! Realizations of the gap noise `δE(t)` (stationary Ornstein-Uhlenbeck) and
//! of the multiplicative coupling noise `f(t)` (symmetric telegraph) are
//! sampled on a uniform grid. Along each realization the time-dependent
//! forward and backward rates are evaluated and the two-state master
//! equation `dp₂/dt = p₁ k₁₂(t) − p₂ k₂₁(t)` is propagated.
//!
//! Every trajectory owns an independent, reproducible random stream derived
//! from `(master_seed, index)`. Ensemble statistics are reduced in index
//! order, so results do not depend on the number of worker threads.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::quad::{IntegralResult, IntegralStatus};
use crate::rates::{FluctuationModel, RateEngine};

/// Relative standard error above which an ensemble estimate is flagged.
pub const SE_WARNING_FRACTION: f64 = 0.1;
/// Tolerance of the step-doubling control in [`me_propagate`].
pub const ME_TOLERANCE: f64 = 1e-8;
/// Admissible excursion of populations outside `[0, 1]`.
pub const POPULATION_SLACK: f64 = 1e-10;
/// Memory kernel entries below this magnitude (and staying below it) are
/// dropped from single-time rate sums.
const KERNEL_CUTOFF: f64 = 1e-14;
/// Trajectories per deterministic reduction chunk.
const CHUNK: usize = 32;

/// Stationary Gaussian gap noise with exponential correlation
/// `⟨δE(t)δE(0)⟩ = de_sq · e^{-t/τ_e}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapNoise {
    pub tau_e: f64,
    pub de_sq: f64,
}

/// Symmetric telegraph coupling noise, `f = ±1` with
/// `⟨f(t)f(0)⟩ = e^{-t/τ_f}`. `tau_f = ∞` freezes `f` at its initial sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingNoise {
    pub tau_f: f64,
}

impl GapNoise {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_e > 0.0 && self.tau_e.is_finite()) {
            return validation(format!("tau_e must be positive and finite, got {}", self.tau_e));
        }
        if !(self.de_sq >= 0.0 && self.de_sq.is_finite()) {
            return validation(format!("<dE^2> must be non-negative, got {}", self.de_sq));
        }
        Ok(())
    }
}

impl CouplingNoise {
    pub fn validate(&self, dt: f64) -> Result<()> {
        if !(self.tau_f > 0.0) {
            return validation(format!("tau_f must be positive, got {}", self.tau_f));
        }
        if dt > self.tau_f / 20.0 {
            return validation(format!(
                "time step {dt} is too coarse for the coupling noise: need dt <= tau_f/20 = {}",
                self.tau_f / 20.0
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    GaussianOu(GapNoise),
    Telegraph(CouplingNoise),
}

/// A single noise process sampled on `t_k = k·dt`, `k = 0..=round(T/dt)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseProcess {
    pub kind: NoiseKind,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
}

fn check_grid(dt: f64, horizon: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return validation(format!("time step must be positive, got {dt}"));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return validation(format!("horizon must be non-negative, got {horizon}"));
    }
    let steps = (horizon / dt).round();
    if steps > 5e7 {
        return validation(format!("{steps} time steps requested; reduce horizon or increase dt"));
    }
    Ok(steps as usize)
}

impl NoiseProcess {
    pub fn new(kind: NoiseKind, dt: f64, horizon: f64, seed: u64) -> Result<Self> {
        let p = Self { kind, dt, horizon, seed };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_grid(self.dt, self.horizon)?;
        match self.kind {
            NoiseKind::GaussianOu(g) => g.validate(),
            NoiseKind::Telegraph(c) => c.validate(self.dt),
        }
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn t_grid(&self) -> Vec<f64> {
        (0..=self.n_steps()).map(|k| k as f64 * self.dt).collect()
    }
}

fn ou_path<R: Rng>(noise: &GapNoise, dt: f64, n_steps: usize, rng: &mut R) -> Vec<f64> {
    let decay = (-dt / noise.tau_e).exp();
    let kick = (noise.de_sq * -(-2.0 * dt / noise.tau_e).exp_m1()).sqrt();
    let mut out = Vec::with_capacity(n_steps + 1);
    let xi: f64 = rng.sample(StandardNormal);
    let mut x = noise.de_sq.sqrt() * xi;
    out.push(x);
    for _ in 0..n_steps {
        let xi: f64 = rng.sample(StandardNormal);
        x = x * decay + kick * xi;
        out.push(x);
    }
    out
}

fn telegraph_path<R: Rng>(noise: &CouplingNoise, dt: f64, n_steps: usize, rng: &mut R) -> Vec<f64> {
    // Odd number of Poisson(dt/(2τ_f)) flips in one step.
    let p_flip = -0.5 * (-dt / noise.tau_f).exp_m1();
    let mut f = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(f);
    for _ in 0..n_steps {
        if p_flip > 0.0 && rng.random::<f64>() < p_flip {
            f = -f;
        }
        out.push(f);
    }
    out
}

/// Exact discretization of a stationary OU process; `δE₀` is drawn from the
/// stationary distribution.
pub fn sample_ou(process: &NoiseProcess) -> Result<Vec<f64>> {
    process.validate()?;
    match process.kind {
        NoiseKind::GaussianOu(g) => {
            let mut rng = ChaCha8Rng::seed_from_u64(process.seed);
            Ok(ou_path(&g, process.dt, process.n_steps(), &mut rng))
        }
        NoiseKind::Telegraph(_) => validation("sample_ou needs a Gaussian OU process"),
    }
}

/// Symmetric telegraph process with flip rate `1/(2τ_f)`.
pub fn sample_telegraph(process: &NoiseProcess) -> Result<Vec<f64>> {
    process.validate()?;
    match process.kind {
        NoiseKind::Telegraph(c) => {
            let mut rng = ChaCha8Rng::seed_from_u64(process.seed);
            Ok(telegraph_path(&c, process.dt, process.n_steps(), &mut rng))
        }
        NoiseKind::GaussianOu(_) => validation("sample_telegraph needs a telegraph process"),
    }
}

/// Cumulative trapezoidal integral `Φ(t_k) = ∫₀^{t_k} δE`.
pub fn cumulative_phase(gap: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(gap.len());
    let mut acc = 0.0;
    for (k, &g) in gap.iter().enumerate() {
        if k > 0 {
            acc += 0.5 * dt * (gap[k - 1] + g);
        }
        out.push(acc);
    }
    out
}

/// One realization of the noisy Hamiltonian on the ensemble grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    /// `δE(t_k)`, zeros when there is no gap noise.
    pub gap: Vec<f64>,
    /// `Φ(t_k)`.
    pub phase: Vec<f64>,
    /// `f(t_k)`; `None` means `f ≡ 1`.
    pub coupling: Option<Vec<f64>>,
}

impl Trajectory {
    /// Noise-free realization with `n_steps + 1` grid points.
    pub fn quiet(dt: f64, n_steps: usize) -> Self {
        Self {
            dt,
            gap: vec![0.0; n_steps + 1],
            phase: vec![0.0; n_steps + 1],
            coupling: None,
        }
    }

    /// Build from explicit samples (gap noise and optional coupling).
    pub fn from_samples(dt: f64, gap: Vec<f64>, coupling: Option<Vec<f64>>) -> Result<Self> {
        if gap.is_empty() {
            return validation("trajectory needs at least one sample");
        }
        if let Some(c) = &coupling {
            if c.len() != gap.len() {
                return validation("gap and coupling samples must have equal length");
            }
        }
        let phase = cumulative_phase(&gap, dt);
        Ok(Self { dt, gap, phase, coupling })
    }

    pub fn len(&self) -> usize {
        self.gap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gap.is_empty()
    }

    fn f(&self, k: usize) -> f64 {
        self.coupling.as_ref().map_or(1.0, |c| c[k])
    }

    /// Grid index of time `t`, or a validation error when `t` is off-grid.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        grid_index(t, self.dt, self.len())
    }
}

fn grid_index(t: f64, dt: f64, len: usize) -> Result<usize> {
    let x = t / dt;
    let k = x.round();
    if !(k >= 0.0) || (x - k).abs() > 1e-9 * x.abs().max(1.0) || k as usize >= len {
        return validation(format!("time {t} is not on the trajectory grid (dt = {dt}, {len} points)"));
    }
    Ok(k as usize)
}

/// Ensemble of independent noise realizations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEnsemble {
    pub n_traj: usize,
    pub gap_noise: Option<GapNoise>,
    pub coupling_noise: Option<CouplingNoise>,
    pub dt: f64,
    pub horizon: f64,
    pub master_seed: u64,
}

impl TrajectoryEnsemble {
    /// `min(τ_e, τ_f, 1/ω_c)/20`.
    pub fn default_dt(gap: Option<&GapNoise>, coupling: Option<&CouplingNoise>) -> f64 {
        let mut scale: f64 = 1.0;
        if let Some(g) = gap {
            scale = scale.min(g.tau_e);
        }
        if let Some(c) = coupling {
            scale = scale.min(c.tau_f);
        }
        scale / 20.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_traj == 0 {
            return validation("n_traj must be at least 1");
        }
        check_grid(self.dt, self.horizon)?;
        if let Some(g) = &self.gap_noise {
            g.validate()?;
        }
        if let Some(c) = &self.coupling_noise {
            c.validate(self.dt)?;
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn t_grid(&self) -> Vec<f64> {
        (0..=self.n_steps()).map(|k| k as f64 * self.dt).collect()
    }

    /// Independent random stream of trajectory `index`.
    pub fn rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(index as u64);
        rng
    }

    /// Realization `index`; identical for identical `(master_seed, index)`.
    pub fn trajectory(&self, index: usize) -> Trajectory {
        let n = self.n_steps();
        let mut rng = self.rng(index);
        let gap = match &self.gap_noise {
            Some(g) => ou_path(g, self.dt, n, &mut rng),
            None => vec![0.0; n + 1],
        };
        let coupling = self
            .coupling_noise
            .as_ref()
            .map(|c| telegraph_path(c, self.dt, n, &mut rng));
        let phase = cumulative_phase(&gap, self.dt);
        Trajectory { dt: self.dt, gap, phase, coupling }
    }

    /// The closed-form damping model matching this ensemble's noise.
    pub fn fluctuation_model(&self) -> FluctuationModel {
        let (tau_e, de_sq) = self.gap_noise.map_or((1.0, 0.0), |g| (g.tau_e, g.de_sq));
        let tau_f = self.coupling_noise.and_then(|c| c.tau_f.is_finite().then_some(c.tau_f));
        FluctuationModel { tau_e, de_sq, tau_f }
    }
}

/// Bath memory kernel tabulated on the trajectory grid:
/// `K_m = |J|² e^{iΔτ_m − C(τ_m)}` and its time-reversed partner
/// `K̃_m = |J|² e^{iΔτ_m − C(τ_m)*}` (the conjugate of the backward kernel).
#[derive(Clone)]
pub struct TrajectoryRateModel {
    engine: RateEngine,
    mean_gap: f64,
    j_sq: f64,
    dt: f64,
    forward: Vec<Complex64>,
    backward_conj: Vec<Complex64>,
    /// Kernel entries beyond this index are negligible (convergent baths).
    memory: usize,
}

impl std::fmt::Debug for TrajectoryRateModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrajectoryRateModel")
            .field("bath", self.engine.bath())
            .field("mean_gap", &self.mean_gap)
            .field("j_sq", &self.j_sq)
            .field("dt", &self.dt)
            .field("len", &self.forward.len())
            .field("memory", &self.memory)
            .finish()
    }
}

impl TrajectoryRateModel {
    /// Tabulate the kernel for `n_steps + 1` grid points of spacing `dt`.
    pub fn new(engine: RateEngine, mean_gap: f64, j_sq: f64, dt: f64, n_steps: usize) -> Result<Self> {
        if !mean_gap.is_finite() {
            return validation(format!("mean gap must be finite, got {mean_gap}"));
        }
        if !(j_sq > 0.0 && j_sq.is_finite()) {
            return validation(format!("|J|^2 must be positive, got {j_sq}"));
        }
        check_grid(dt, dt * n_steps as f64)?;
        let mut forward = Vec::with_capacity(n_steps + 1);
        let mut backward_conj = Vec::with_capacity(n_steps + 1);
        for m in 0..=n_steps {
            let tau = m as f64 * dt;
            let c = engine.lineshape().eval(tau);
            if !(c.re.is_finite() && c.im.is_finite()) {
                return Err(Error::NonFinite { t: tau });
            }
            let phase = Complex64::from_polar(j_sq, mean_gap * tau);
            forward.push(phase * (-c).exp());
            backward_conj.push(phase * (-c.conj()).exp());
        }
        let memory = match engine.lineshape().c_r_infinity() {
            crate::bath::LongTimeLimit::Divergent => forward
                .iter()
                .rposition(|k| k.norm() >= KERNEL_CUTOFF * j_sq)
                .map_or(0, |i| (i + 1).min(n_steps)),
            crate::bath::LongTimeLimit::Finite(_) => n_steps,
        };
        Ok(Self { engine, mean_gap, j_sq, dt, forward, backward_conj, memory })
    }

    pub fn for_ensemble(engine: RateEngine, mean_gap: f64, j_sq: f64, ensemble: &TrajectoryEnsemble) -> Result<Self> {
        ensemble.validate()?;
        Self::new(engine, mean_gap, j_sq, ensemble.dt, ensemble.n_steps())
    }

    pub fn engine(&self) -> &RateEngine {
        &self.engine
    }

    pub fn mean_gap(&self) -> f64 {
        self.mean_gap
    }

    pub fn j_sq(&self) -> f64 {
        self.j_sq
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn check_trajectory(&self, traj: &Trajectory) -> Result<()> {
        if (traj.dt - self.dt).abs() > 1e-12 * self.dt {
            return validation(format!("trajectory step {} differs from kernel step {}", traj.dt, self.dt));
        }
        if traj.len() > self.forward.len() {
            return validation(format!(
                "trajectory has {} points but the kernel covers only {}",
                traj.len(),
                self.forward.len()
            ));
        }
        Ok(())
    }

    fn weight(&self, m: usize, j: usize) -> f64 {
        let mut w = self.dt;
        if m == 0 {
            w -= 0.5 * self.dt;
        }
        if m == j {
            w -= 0.5 * self.dt;
        }
        w
    }

    /// Forward and backward rates at grid index `j` by direct summation.
    pub fn rates_at_index(&self, traj: &Trajectory, j: usize) -> Result<(f64, f64)> {
        self.check_trajectory(traj)?;
        if j >= traj.len() {
            return validation(format!("index {j} beyond trajectory of {} points", traj.len()));
        }
        let mut fwd = Complex64::new(0.0, 0.0);
        let mut bwd = Complex64::new(0.0, 0.0);
        let fj = traj.f(j);
        for m in 0..=j.min(self.memory) {
            let w = self.weight(m, j) * fj * traj.f(j - m);
            let noise = Complex64::from_polar(1.0, traj.phase[j] - traj.phase[j - m]);
            fwd += self.forward[m] * noise * w;
            bwd += self.backward_conj[m] * noise * w;
        }
        Ok((2.0 * fwd.re, 2.0 * bwd.re))
    }

    /// Forward rate `k₁₂(t)` along one realization.
    pub fn k12_along_trajectory(&self, traj: &Trajectory, t: f64) -> Result<f64> {
        let j = traj.index_of(t)?;
        Ok(self.rates_at_index(traj, j)?.0)
    }

    /// Backward rate `k₂₁(t)`: reversed gap, conjugate noise phase.
    pub fn k21_along_trajectory(&self, traj: &Trajectory, t: f64) -> Result<f64> {
        let j = traj.index_of(t)?;
        Ok(self.rates_at_index(traj, j)?.1)
    }

    /// Deterministic rates obtained by replacing the noise factor with its
    /// ensemble average `D(τ)` (decoupled averages).
    pub fn averaged_rate_curves(&self, fluct: &FluctuationModel, len: usize) -> (Vec<f64>, Vec<f64>) {
        let len = len.min(self.forward.len());
        let mut fwd_cum = Complex64::new(0.0, 0.0);
        let mut bwd_cum = Complex64::new(0.0, 0.0);
        let mut k12 = Vec::with_capacity(len);
        let mut k21 = Vec::with_capacity(len);
        for j in 0..len {
            let d = fluct.damping(j as f64 * self.dt);
            let (kf, kb) = (self.forward[j] * d, self.backward_conj[j] * d);
            // Trapezoid: full weight on interior points, half on both ends.
            let f = fwd_cum + kf * (0.5 * self.dt) - self.forward[0] * (0.5 * self.dt);
            let b = bwd_cum + kb * (0.5 * self.dt) - self.backward_conj[0] * (0.5 * self.dt);
            if j == 0 {
                k12.push(0.0);
                k21.push(0.0);
            } else {
                k12.push(2.0 * f.re);
                k21.push(2.0 * b.re);
            }
            fwd_cum += kf * self.dt;
            bwd_cum += kb * self.dt;
        }
        (k12, k21)
    }
}

/// FFT convolution workspace for whole-trajectory rate curves.
struct CurvePlan {
    size: usize,
    forward_fft: Arc<dyn Fft<f64>>,
    inverse_fft: Arc<dyn Fft<f64>>,
    forward_spec: Vec<Complex64>,
    backward_spec: Vec<Complex64>,
}

impl CurvePlan {
    fn new(model: &TrajectoryRateModel, len: usize) -> Self {
        let klen = (model.memory + 1).min(len);
        let size = (len + klen - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward_fft = planner.plan_fft_forward(size);
        let inverse_fft = planner.plan_fft_inverse(size);
        let spectrum = |kernel: &[Complex64]| {
            let mut buf = vec![Complex64::new(0.0, 0.0); size];
            for (m, slot) in buf.iter_mut().take(klen).enumerate() {
                let w = if m == 0 { 0.5 * model.dt } else { model.dt };
                *slot = kernel[m] * w;
            }
            forward_fft.process(&mut buf);
            buf
        };
        let forward_spec = spectrum(&model.forward);
        let backward_spec = spectrum(&model.backward_conj);
        Self { size, forward_fft, inverse_fft, forward_spec, backward_spec }
    }

    /// `(k₁₂(t_j), k₂₁(t_j))` for every grid index of `traj`.
    fn rates(&self, model: &TrajectoryRateModel, traj: &Trajectory) -> (Vec<f64>, Vec<f64>) {
        let len = traj.len();
        let u: Vec<Complex64> = (0..len)
            .map(|i| Complex64::from_polar(traj.f(i), -traj.phase[i]))
            .collect();
        let mut spec = vec![Complex64::new(0.0, 0.0); self.size];
        spec[..len].copy_from_slice(&u);
        self.forward_fft.process(&mut spec);
        let scale = 1.0 / self.size as f64;
        let conv = |kernel_spec: &[Complex64]| {
            let mut buf: Vec<Complex64> = spec.iter().zip(kernel_spec).map(|(a, b)| a * b).collect();
            self.inverse_fft.process(&mut buf);
            buf
        };
        let sf = conv(&self.forward_spec);
        let sb = conv(&self.backward_spec);
        let mut k12 = Vec::with_capacity(len);
        let mut k21 = Vec::with_capacity(len);
        for j in 0..len {
            let mut f = sf[j] * scale;
            let mut b = sb[j] * scale;
            if j <= model.memory {
                // Half weight at the far end of the trapezoid.
                f -= model.forward[j] * u[0] * (0.5 * model.dt);
                b -= model.backward_conj[j] * u[0] * (0.5 * model.dt);
            }
            let outer = Complex64::from_polar(traj.f(j), traj.phase[j]);
            if j == 0 {
                k12.push(0.0);
                k21.push(0.0);
            } else {
                k12.push(2.0 * (outer * f).re);
                k21.push(2.0 * (outer * b).re);
            }
        }
        (k12, k21)
    }
}

/// Ensemble mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub standard_error: f64,
    pub n: usize,
    /// Set when the standard error exceeds 10% of |mean|.
    pub warning: bool,
}

/// Jackknife (delete-one) mean and standard error.
pub fn jackknife_mean(values: &[f64]) -> MeanEstimate {
    let n = values.len();
    let total: f64 = values.iter().sum();
    let mean = total / n as f64;
    let se = if n < 2 {
        f64::INFINITY
    } else {
        let nf = n as f64;
        let ss: f64 = values
            .iter()
            .map(|x| {
                let loo = (total - x) / (nf - 1.0);
                (loo - mean).powi(2)
            })
            .sum();
        ((nf - 1.0) / nf * ss).sqrt()
    };
    MeanEstimate {
        mean,
        standard_error: se,
        n,
        warning: !(se <= SE_WARNING_FRACTION * mean.abs()),
    }
}

/// Evaluate `f(index)` for every trajectory in parallel, preserving order.
fn per_trajectory<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Ensemble-averaged rate at `t_eval` with jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McRate {
    pub t_eval: f64,
    pub k12: MeanEstimate,
    pub k21: MeanEstimate,
}

/// Average of the trajectory rates at `t_eval`, which must lie on the grid
/// and be at least `10·max(τ_e, τ_f, 1/ω_c)`.
pub fn mc_avg_rate(ensemble: &TrajectoryEnsemble, model: &TrajectoryRateModel, t_eval: f64) -> Result<McRate> {
    ensemble.validate()?;
    let mut scale: f64 = 1.0;
    if let Some(g) = &ensemble.gap_noise {
        scale = scale.max(g.tau_e);
    }
    if let Some(c) = &ensemble.coupling_noise {
        if c.tau_f.is_finite() {
            scale = scale.max(c.tau_f);
        }
    }
    if t_eval < 10.0 * scale * (1.0 - 1e-12) {
        return validation(format!(
            "t_eval = {t_eval} is too early for a plateau; need at least {}",
            10.0 * scale
        ));
    }
    let j = grid_index(t_eval, ensemble.dt, ensemble.n_steps() + 1)?;
    let pairs = per_trajectory(ensemble.n_traj, |i| {
        let traj = ensemble.trajectory(i);
        model.rates_at_index(&traj, j)
    })?;
    let (k12, k21): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    Ok(McRate { t_eval, k12: jackknife_mean(&k12), k21: jackknife_mean(&k21) })
}

/// One point of the cumulant check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CumulantPoint {
    pub tau: f64,
    pub mc_re: f64,
    pub mc_im: f64,
    pub se_re: f64,
    pub se_im: f64,
    /// `exp{-(τ/τ_e − 1 + e^{-τ/τ_e}) ⟨δE²⟩ τ_e²}`.
    pub closed_form: f64,
}

impl CumulantPoint {
    pub fn within(&self, n_se: f64) -> bool {
        (self.mc_re - self.closed_form).abs() <= n_se * self.se_re
    }
}

/// Compare `⟨e^{i(Φ(T)−Φ(T−τ))}⟩` with the Gaussian cumulant result for each
/// lag `τ` (on the grid, `0 ≤ τ ≤ T`).
pub fn cumulant_phase_check(ensemble: &TrajectoryEnsemble, taus: &[f64]) -> Result<Vec<CumulantPoint>> {
    ensemble.validate()?;
    let gap = ensemble
        .gap_noise
        .ok_or_else(|| Error::Validation("cumulant check needs gap noise".into()))?;
    let n = ensemble.n_steps();
    let lags: Vec<usize> = taus
        .iter()
        .map(|&tau| grid_index(tau, ensemble.dt, n + 1))
        .collect::<Result<_>>()?;
    let samples = per_trajectory(ensemble.n_traj, |i| {
        let traj = ensemble.trajectory(i);
        Ok(lags
            .iter()
            .map(|&m| Complex64::from_polar(1.0, traj.phase[n] - traj.phase[n - m]))
            .collect::<Vec<_>>())
    })?;
    let model = FluctuationModel { tau_e: gap.tau_e, de_sq: gap.de_sq, tau_f: None };
    Ok(lags
        .iter()
        .enumerate()
        .map(|(p, &m)| {
            let re: Vec<f64> = samples.iter().map(|s| s[p].re).collect();
            let im: Vec<f64> = samples.iter().map(|s| s[p].im).collect();
            let (er, ei) = (jackknife_mean(&re), jackknife_mean(&im));
            let tau = m as f64 * ensemble.dt;
            CumulantPoint {
                tau,
                mc_re: er.mean,
                mc_im: ei.mean,
                se_re: er.standard_error,
                se_im: ei.standard_error,
                closed_form: (-model.gap_exponent(tau)).exp(),
            }
        })
        .collect())
}

/// Rate input of the master equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateFunction {
    Constant(f64),
    /// Samples on `t0 + k·dt`, linearly interpolated.
    Curve { t0: f64, dt: f64, values: Vec<f64> },
}

impl RateFunction {
    pub fn validate(&self) -> Result<()> {
        match self {
            RateFunction::Constant(k) => {
                if !(*k >= 0.0 && k.is_finite()) {
                    return validation(format!("rates must be non-negative and finite, got {k}"));
                }
            }
            RateFunction::Curve { t0, dt, values } => {
                if !(dt > &0.0) || !t0.is_finite() || values.is_empty() {
                    return validation("rate curve needs dt > 0, finite t0 and at least one sample");
                }
                if let Some((i, k)) = values.iter().enumerate().find(|(_, k)| !(**k >= 0.0 && k.is_finite())) {
                    return validation(format!(
                        "rates must be non-negative and finite; sample {i} (t = {}) is {k}",
                        t0 + i as f64 * dt
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            RateFunction::Constant(k) => *k,
            RateFunction::Curve { t0, dt, values } => {
                let x = ((t - t0) / dt).max(0.0);
                let i = x.floor() as usize;
                if i + 1 >= values.len() {
                    return *values.last().unwrap();
                }
                let w = x - i as f64;
                values[i] * (1.0 - w) + values[i + 1] * w
            }
        }
    }

    fn max_value(&self) -> f64 {
        match self {
            RateFunction::Constant(k) => k.abs(),
            RateFunction::Curve { values, .. } => values.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    fn end(&self) -> f64 {
        match self {
            RateFunction::Constant(_) => f64::INFINITY,
            RateFunction::Curve { t0, dt, values } => t0 + dt * (values.len() - 1) as f64,
        }
    }

    fn knots_in(&self, a: f64, b: f64, out: &mut Vec<f64>) {
        if let RateFunction::Curve { t0, dt, values } = self {
            let first = ((a - t0) / dt).floor().max(0.0) as usize;
            for k in first..values.len() {
                let t = t0 + k as f64 * dt;
                if t >= b {
                    break;
                }
                if t > a {
                    out.push(t);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationState {
    pub t: f64,
    pub p1: f64,
    pub p2: f64,
}

fn rk4_run(k12: &RateFunction, k21: &RateFunction, p2_0: f64, nodes: &[f64], out_idx: &[usize], sub: usize) -> Vec<f64> {
    let rhs = |t: f64, p2: f64| (1.0 - p2) * k12.eval(t) - p2 * k21.eval(t);
    let mut p2 = p2_0;
    let mut out = Vec::with_capacity(out_idx.len());
    let mut next_out = 0;
    if out_idx.first() == Some(&0) {
        out.push(p2);
        next_out = 1;
    }
    for (n, w) in nodes.windows(2).enumerate() {
        let h = (w[1] - w[0]) / sub as f64;
        for s in 0..sub {
            let t = w[0] + s as f64 * h;
            let a = rhs(t, p2);
            let b = rhs(t + 0.5 * h, p2 + 0.5 * h * a);
            let c = rhs(t + 0.5 * h, p2 + 0.5 * h * b);
            let d = rhs(t + h, p2 + h * c);
            p2 += h / 6.0 * (a + 2.0 * b + 2.0 * c + d);
        }
        while next_out < out_idx.len() && out_idx[next_out] == n + 1 {
            out.push(p2);
            next_out += 1;
        }
    }
    out
}

/// Fixed-step RK4 solution of `dp₂/dt = (1 − p₂) k₁₂(t) − p₂ k₂₁(t)` at the
/// points of `t_grid` (ascending; `p₂(t_grid[0]) = p2_0`). Steps are aligned
/// with the knots of curve rates and refined by doubling until `p₂(T)`
/// changes by less than [`ME_TOLERANCE`].
pub fn me_propagate(
    k12: &RateFunction,
    k21: &RateFunction,
    p2_0: f64,
    t_grid: &[f64],
) -> Result<Vec<PopulationState>> {
    k12.validate()?;
    k21.validate()?;
    propagate_signed(k12, k21, p2_0, t_grid)
}

/// [`me_propagate`] without the sign check on the rates. Instantaneous
/// rates along a single noise realization may dip below zero; the
/// ensemble average is only unbiased if those points are kept as they are.
fn propagate_signed(
    k12: &RateFunction,
    k21: &RateFunction,
    p2_0: f64,
    t_grid: &[f64],
) -> Result<Vec<PopulationState>> {
    for r in [k12, k21] {
        let finite = match r {
            RateFunction::Constant(k) => k.is_finite(),
            RateFunction::Curve { t0, dt, values } => {
                *dt > 0.0 && t0.is_finite() && !values.is_empty() && values.iter().all(|v| v.is_finite())
            }
        };
        if !finite {
            return validation("rate input must be finite and non-empty");
        }
    }
    if !(0.0..=1.0).contains(&p2_0) {
        return validation(format!("initial population must lie in [0, 1], got {p2_0}"));
    }
    if t_grid.is_empty() {
        return validation("time grid is empty");
    }
    if t_grid.iter().any(|t| !t.is_finite()) || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return validation("time grid must be finite and strictly ascending");
    }
    let t_end = *t_grid.last().unwrap();
    for (name, r) in [("k12", k12), ("k21", k21)] {
        if t_end > r.end() * (1.0 + 1e-12) + 1e-12 {
            return validation(format!("{name} curve ends at {} before the grid end {t_end}", r.end()));
        }
    }

    // Integration nodes: the output grid plus every curve knot inside it,
    // so each RK4 step sees a smooth (linear) rate.
    let mut tagged: Vec<(f64, bool)> = t_grid.iter().map(|&t| (t, true)).collect();
    let mut knots = Vec::new();
    k12.knots_in(t_grid[0], t_end, &mut knots);
    k21.knots_in(t_grid[0], t_end, &mut knots);
    tagged.extend(knots.into_iter().map(|t| (t, false)));
    tagged.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
    let mut merged: Vec<(f64, bool)> = Vec::with_capacity(tagged.len());
    for (t, o) in tagged {
        match merged.last_mut() {
            Some(last) if t - last.0 <= 1e-12 * t.abs().max(1.0) => last.1 |= o,
            _ => merged.push((t, o)),
        }
    }
    let nodes: Vec<f64> = merged.iter().map(|m| m.0).collect();
    let out_idx: Vec<usize> = merged.iter().enumerate().filter(|(_, m)| m.1).map(|(i, _)| i).collect();

    let rate_max = k12.max_value() + k21.max_value();
    let widest = nodes.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let mut sub = 1usize;
    while widest / sub as f64 * rate_max > 0.5 && sub < 1 << 20 {
        sub *= 2;
    }
    let mut prev = rk4_run(k12, k21, p2_0, &nodes, &out_idx, sub);
    let mut solution = None;
    for _ in 0..16 {
        sub *= 2;
        let next = rk4_run(k12, k21, p2_0, &nodes, &out_idx, sub);
        let change = next.iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prev = next;
        if change < ME_TOLERANCE {
            solution = Some(std::mem::take(&mut prev));
            break;
        }
    }
    let p2 = solution.ok_or_else(|| Error::NotConverged {
        what: "master-equation propagation".into(),
        result: IntegralResult {
            value: *prev.last().unwrap(),
            error_estimate: f64::NAN,
            t_truncation: t_end,
            status: IntegralStatus::CapReached,
        },
    })?;
    Ok(t_grid
        .iter()
        .zip(p2)
        .map(|(&t, p2)| PopulationState { t, p1: 1.0 - p2, p2 })
        .collect())
}

/// Averaged population dynamics and reference curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationCurves {
    pub t: Vec<f64>,
    /// `⟨p₂(t)⟩` over realizations.
    pub mean: Vec<f64>,
    pub standard_error: Vec<f64>,
    /// Master equation with the constant fluctuation-averaged rates.
    pub mean_field_constant: Vec<f64>,
    /// Master equation with the decoupled, finite-time averaged rates.
    pub mean_field_decoupled: Vec<f64>,
    pub n_traj: usize,
    /// Trajectory grid points (forward and backward counted separately) at
    /// which an instantaneous rate was negative. They are propagated as is.
    pub negative_rate_points: usize,
    /// Largest `|p₁ + p₂ − 1|` over all realizations.
    pub max_conservation_error: f64,
    /// Largest excursion of `p₂` outside `[0, 1]` over all realizations.
    pub max_bound_violation: f64,
}

struct CurveAccumulator {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    negative: usize,
    conservation: f64,
    bounds: f64,
}

impl CurveAccumulator {
    fn new(len: usize) -> Self {
        Self { sum: vec![0.0; len], sum_sq: vec![0.0; len], negative: 0, conservation: 0.0, bounds: 0.0 }
    }

    fn absorb(&mut self, other: CurveAccumulator) {
        for (a, b) in self.sum.iter_mut().zip(other.sum) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(other.sum_sq) {
            *a += b;
        }
        self.negative += other.negative;
        self.conservation = self.conservation.max(other.conservation);
        self.bounds = self.bounds.max(other.bounds);
    }
}

#[cfg(test)]
fn clamp_rates(values: &mut [f64]) -> usize {
    let mut n = 0;
    for v in values {
        if *v < 0.0 {
            *v = 0.0;
            n += 1;
        }
    }
    n
}

/// Propagate the master equation along every realization and average.
///
/// The system starts in state 1 (`p₂ = 0`). Instantaneous trajectory rates
/// can dip below zero; such points are kept (clamping them would bias the
/// average) and counted.
pub fn mc_avg_population(
    ensemble: &TrajectoryEnsemble,
    model: &TrajectoryRateModel,
    t_grid: &[f64],
) -> Result<PopulationCurves> {
    ensemble.validate()?;
    if t_grid.is_empty() || t_grid[0] != 0.0 {
        return validation("population grid must start at t = 0");
    }
    if *t_grid.last().unwrap() > ensemble.horizon * (1.0 + 1e-12) {
        return validation("population grid extends beyond the ensemble horizon");
    }
    let len = ensemble.n_steps() + 1;
    let traj0 = Trajectory::quiet(ensemble.dt, ensemble.n_steps());
    model.check_trajectory(&traj0)?;
    let plan = CurvePlan::new(model, len);
    let curve = |values: Vec<f64>| RateFunction::Curve { t0: 0.0, dt: ensemble.dt, values };

    let realize = |i: usize| -> Result<(Vec<PopulationState>, usize)> {
        let traj = ensemble.trajectory(i);
        let (k12, k21) = plan.rates(model, &traj);
        let negative = k12.iter().chain(&k21).filter(|k| **k < 0.0).count();
        Ok((propagate_signed(&curve(k12), &curve(k21), 0.0, t_grid)?, negative))
    };
    // Sums are taken relative to the first realization: numerically stable,
    // and identical realizations average to exactly that realization.
    let reference: Vec<f64> = realize(0)?.0.iter().map(|s| s.p2).collect();

    let n_chunks = ensemble.n_traj.div_ceil(CHUNK);
    let chunks = per_trajectory(n_chunks, |c| {
        let mut acc = CurveAccumulator::new(t_grid.len());
        for i in c * CHUNK..((c + 1) * CHUNK).min(ensemble.n_traj) {
            let (states, negative) = realize(i)?;
            acc.negative += negative;
            for (p, s) in states.iter().enumerate() {
                let d = s.p2 - reference[p];
                acc.sum[p] += d;
                acc.sum_sq[p] += d * d;
                acc.conservation = acc.conservation.max((s.p1 + s.p2 - 1.0).abs());
                acc.bounds = acc.bounds.max((-s.p2).max(s.p2 - 1.0)).max(0.0);
            }
        }
        Ok(acc)
    })?;
    let mut total = CurveAccumulator::new(t_grid.len());
    for c in chunks {
        total.absorb(c);
    }
    let n = ensemble.n_traj as f64;
    let shift: Vec<f64> = total.sum.iter().map(|s| s / n).collect();
    let mean: Vec<f64> = reference.iter().zip(&shift).map(|(r, d)| r + d).collect();
    let standard_error: Vec<f64> = total
        .sum_sq
        .iter()
        .zip(&shift)
        .map(|(ss, m)| {
            if ensemble.n_traj < 2 {
                f64::INFINITY
            } else {
                ((ss / n - m * m).max(0.0) / (n - 1.0)).sqrt()
            }
        })
        .collect();

    let fluct = ensemble.fluctuation_model();
    let engine = model.engine();
    let kf = engine.m_fgr_2(model.mean_gap(), model.j_sq(), fluct)?.k;
    let kb = engine.m_fgr_2(-model.mean_gap(), model.j_sq(), fluct)?.k;
    if kf < 0.0 || kb < 0.0 {
        return Err(Error::Validation(format!(
            "fluctuation-averaged rates are negative (forward {kf}, backward {kb})"
        )));
    }
    let constant = me_propagate(&RateFunction::Constant(kf), &RateFunction::Constant(kb), 0.0, t_grid)?;
    let (d12, d21) = model.averaged_rate_curves(&fluct, len);
    let decoupled = propagate_signed(&curve(d12), &curve(d21), 0.0, t_grid)?;

    Ok(PopulationCurves {
        t: t_grid.to_vec(),
        mean,
        standard_error,
        mean_field_constant: constant.iter().map(|s| s.p2).collect(),
        mean_field_decoupled: decoupled.iter().map(|s| s.p2).collect(),
        n_traj: ensemble.n_traj,
        negative_rate_points: total.negative,
        max_conservation_error: total.conservation,
        max_bound_violation: total.bounds,
    })
}

/// Rate curves `(k₁₂(t_j), k₂₁(t_j))` over a whole realization, by FFT
/// convolution. Agrees with [`TrajectoryRateModel::rates_at_index`] to
/// rounding error.
pub fn trajectory_rate_curves(model: &TrajectoryRateModel, traj: &Trajectory) -> Result<(Vec<f64>, Vec<f64>)> {
    model.check_trajectory(traj)?;
    let plan = CurvePlan::new(model, traj.len());
    Ok(plan.rates(model, traj))
}

/// Population given by the integral form
/// `p₂(t) = ∫₀^t k₁₂(τ) e^{−∫_τ^t (k₁₂ + k₂₁)} dτ` (starting from `p₂ = 0`),
/// evaluated with composite Simpson sums on `n` intervals.
pub fn population_integral_form(k12: &RateFunction, k21: &RateFunction, t: f64, n: usize) -> f64 {
    let n = n.max(2) & !1;
    let h = t / n as f64;
    // Cumulative ∫₀^x (k₁₂ + k₂₁) on the Simpson nodes (trapezoid on a
    // 4× finer grid keeps it accurate for piecewise-linear input).
    let total = |x: f64| k12.eval(x) + k21.eval(x);
    let mut cum = vec![0.0; n + 1];
    for i in 1..=n {
        let (a, b) = ((i - 1) as f64 * h, i as f64 * h);
        let q = (b - a) / 4.0;
        let mut s = 0.0;
        for k in 0..4 {
            let x0 = a + k as f64 * q;
            s += 0.5 * q * (total(x0) + total(x0 + q));
        }
        cum[i] = cum[i - 1] + s;
    }
    let integrand = |i: usize| k12.eval(i as f64 * h) * (-(cum[n] - cum[i])).exp();
    let mut s = integrand(0) + integrand(n);
    for i in 1..n {
        s += integrand(i) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Exponent of a least-squares power-law fit `y ∝ x^p`.
pub fn power_law_exponent(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::BathModel;
    use crate::rates::RateSpec;
    use approx::assert_abs_diff_eq;

    fn ensemble(n_traj: usize, gap: Option<GapNoise>, coupling: Option<CouplingNoise>, horizon: f64) -> TrajectoryEnsemble {
        TrajectoryEnsemble {
            n_traj,
            gap_noise: gap,
            coupling_noise: coupling,
            dt: TrajectoryEnsemble::default_dt(gap.as_ref(), coupling.as_ref()),
            horizon,
            master_seed: 7,
        }
    }

    fn ohmic_engine() -> RateEngine {
        RateEngine::analytic(BathModel::new(1, 1.0, 1.0).unwrap())
    }

    #[test]
    fn ou_statistics() {
        let g = GapNoise { tau_e: 1.0, de_sq: 0.5 };
        let e = ensemble(10_000, Some(g), None, 2.0);
        let lag = (1.0 / e.dt).round() as usize;
        let (mut s, mut ss, mut sc) = (0.0, 0.0, 0.0);
        for i in 0..e.n_traj {
            let t = e.trajectory(i);
            let x = t.gap[e.n_steps()];
            s += x;
            ss += x * x;
            sc += x * t.gap[e.n_steps() - lag];
        }
        let n = e.n_traj as f64;
        assert!((s / n).abs() < 3.0 * (0.5f64 / n).sqrt());
        assert!(((ss / n) / 0.5 - 1.0).abs() < 0.05);
        assert!(((sc / n) / (0.5 / std::f64::consts::E) - 1.0).abs() < 0.05);
    }

    #[test]
    fn telegraph_statistics() {
        let c = CouplingNoise { tau_f: 0.5 };
        let e = ensemble(10_000, None, Some(c), 1.0);
        let lag = (0.5 / e.dt).round() as usize;
        let mut sc = 0.0;
        for i in 0..e.n_traj {
            let f = e.trajectory(i).coupling.unwrap();
            assert!(f.iter().all(|v| v * v == 1.0));
            sc += f[e.n_steps()] * f[e.n_steps() - lag];
        }
        assert!(((sc / e.n_traj as f64) * std::f64::consts::E - 1.0).abs() < 0.05);
    }

    #[test]
    fn frozen_telegraph_and_coarse_step() {
        let p = NoiseProcess::new(NoiseKind::Telegraph(CouplingNoise { tau_f: f64::INFINITY }), 0.1, 5.0, 3).unwrap();
        let f = sample_telegraph(&p).unwrap();
        assert!(f.iter().all(|&v| v == f[0]));
        assert!(NoiseProcess::new(NoiseKind::Telegraph(CouplingNoise { tau_f: 1.0 }), 0.1, 5.0, 3).is_err());
        let ou = NoiseProcess::new(NoiseKind::GaussianOu(GapNoise { tau_e: 1.0, de_sq: 1.0 }), 0.1, 5.0, 3).unwrap();
        assert_eq!(sample_ou(&ou).unwrap(), sample_ou(&ou).unwrap());
        assert!(sample_telegraph(&ou).is_err());
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let e = ensemble(3, Some(GapNoise { tau_e: 1.0, de_sq: 1.0 }), None, 1.0);
        assert_eq!(e.trajectory(1), e.trajectory(1));
        assert_ne!(e.trajectory(0).gap, e.trajectory(1).gap);
    }

    #[test]
    fn quiet_rate_matches_continuum() {
        let eng = ohmic_engine();
        let dt = 0.05;
        let n = 400;
        let model = TrajectoryRateModel::new(eng.clone(), 0.5, 1.0, dt, n).unwrap();
        let traj = Trajectory::quiet(dt, n);
        let k = model.k12_along_trajectory(&traj, 20.0).unwrap();
        let cont = eng.rate_vs_time(&RateSpec::new(0.5, 1.0, Default::default()), &[20.0]).unwrap()[0];
        assert!(((k - cont) / cont).abs() <= 1e-3, "{k} vs {cont}");
        assert_eq!(model.k12_along_trajectory(&traj, 0.0).unwrap(), 0.0);
        assert!(model.k12_along_trajectory(&traj, 0.025).is_err());
        let back = model.k21_along_trajectory(&traj, 20.0).unwrap();
        let cont_b = eng.rate_vs_time(&RateSpec::new(-0.5, 1.0, Default::default()), &[20.0]).unwrap()[0];
        assert!(((back - cont_b) / cont_b).abs() <= 1e-3);
    }

    #[test]
    fn fft_curve_matches_direct_sum() {
        let eng = RateEngine::analytic(BathModel::new(3, 1.0, 1.0).unwrap());
        let e = TrajectoryEnsemble {
            n_traj: 1,
            gap_noise: Some(GapNoise { tau_e: 1.0, de_sq: 0.3 }),
            coupling_noise: Some(CouplingNoise { tau_f: 2.0 }),
            dt: 0.05,
            horizon: 15.0,
            master_seed: 11,
        };
        let model = TrajectoryRateModel::for_ensemble(eng, 1.0, 0.2, &e).unwrap();
        let traj = e.trajectory(0);
        let (k12, k21) = trajectory_rate_curves(&model, &traj).unwrap();
        for j in [0, 1, 2, 57, 150, 300] {
            let (a, b) = model.rates_at_index(&traj, j).unwrap();
            assert_abs_diff_eq!(k12[j], a, epsilon = 1e-12);
            assert_abs_diff_eq!(k21[j], b, epsilon = 1e-12);
        }
    }

    #[test]
    fn decoupled_curve_without_noise_is_the_trajectory_rate() {
        let eng = ohmic_engine();
        let model = TrajectoryRateModel::new(eng, 0.3, 0.4, 0.05, 200).unwrap();
        let traj = Trajectory::quiet(0.05, 200);
        let (k12, k21) = trajectory_rate_curves(&model, &traj).unwrap();
        let (d12, d21) = model.averaged_rate_curves(&FluctuationModel { tau_e: 1.0, de_sq: 0.0, tau_f: None }, 201);
        for j in 0..=200 {
            assert_abs_diff_eq!(k12[j], d12[j], epsilon = 1e-12);
            assert_abs_diff_eq!(k21[j], d21[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_rate_master_equation() {
        let (a, b) = (0.7, 0.3);
        let grid: Vec<f64> = (0..=50).map(|i| i as f64 * 0.2).collect();
        let s = me_propagate(&RateFunction::Constant(a), &RateFunction::Constant(b), 0.0, &grid).unwrap();
        for st in &s {
            let exact = a / (a + b) * (1.0 - (-(a + b) * st.t).exp());
            assert!((st.p2 - exact).abs() < 1e-8);
            assert!((st.p1 + st.p2 - 1.0).abs() < 1e-10);
        }
        let z = me_propagate(&RateFunction::Constant(0.0), &RateFunction::Constant(0.0), 0.25, &grid).unwrap();
        assert!(z.iter().all(|st| st.p2 == 0.25));
    }

    #[test]
    fn master_equation_rejects_bad_input() {
        let g = [0.0, 1.0];
        assert!(me_propagate(&RateFunction::Constant(-0.1), &RateFunction::Constant(0.0), 0.0, &g).is_err());
        let neg = RateFunction::Curve { t0: 0.0, dt: 0.5, values: vec![0.1, -0.2, 0.1] };
        assert!(me_propagate(&neg, &RateFunction::Constant(0.0), 0.0, &g).is_err());
        assert!(me_propagate(&RateFunction::Constant(0.1), &RateFunction::Constant(0.0), 1.5, &g).is_err());
        assert!(me_propagate(&RateFunction::Constant(0.1), &RateFunction::Constant(0.0), 0.0, &[1.0, 0.5]).is_err());
    }

    #[test]
    fn time_dependent_master_equation_matches_integral_form() {
        let e = ensemble(1, Some(GapNoise { tau_e: 1.0, de_sq: 0.5 }), None, 10.0);
        let model = TrajectoryRateModel::for_ensemble(ohmic_engine(), 1.0, 0.3, &e).unwrap();
        let (mut k12, mut k21) = trajectory_rate_curves(&model, &e.trajectory(0)).unwrap();
        clamp_rates(&mut k12);
        clamp_rates(&mut k21);
        let f = RateFunction::Curve { t0: 0.0, dt: e.dt, values: k12 };
        let b = RateFunction::Curve { t0: 0.0, dt: e.dt, values: k21 };
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.5).collect();
        let s = me_propagate(&f, &b, 0.0, &grid).unwrap();
        for st in s.iter().skip(1) {
            let oracle = population_integral_form(&f, &b, st.t, 8000);
            assert!((st.p2 - oracle).abs() < 1e-6, "t={} {} vs {}", st.t, st.p2, oracle);
        }
    }

    #[test]
    fn jackknife_of_mean_is_standard_error() {
        let v = [1.0, 2.0, 4.0, 7.0];
        let m = jackknife_mean(&v);
        let mean = 3.5;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 3.0;
        assert_abs_diff_eq!(m.mean, mean, epsilon = 1e-14);
        assert_abs_diff_eq!(m.standard_error, (var / 4.0).sqrt(), epsilon = 1e-12);
        assert!(m.warning);
    }

    #[test]
    fn mc_rate_without_noise_reproduces_plateau() {
        let e = ensemble(4, None, None, 10.0);
        let model = TrajectoryRateModel::for_ensemble(ohmic_engine(), 1.0, 1.0, &e).unwrap();
        let r = mc_avg_rate(&e, &model, 10.0).unwrap();
        let m1 = ohmic_engine().m_fgr_1(1.0, 1.0).unwrap().k;
        assert_eq!(r.k12.standard_error, 0.0);
        assert!(((r.k12.mean - m1) / m1).abs() < 1e-3);
        assert!(mc_avg_rate(&e, &model, 5.0).is_err());
    }

    #[test]
    fn zero_noise_population_is_single_realization() {
        let e = ensemble(3, None, None, 5.0);
        let model = TrajectoryRateModel::for_ensemble(ohmic_engine(), 0.5, 0.2, &e).unwrap();
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 * 0.5).collect();
        let c = mc_avg_population(&e, &model, &grid).unwrap();
        let (k12, k21) = trajectory_rate_curves(&model, &Trajectory::quiet(e.dt, e.n_steps())).unwrap();
        let single = me_propagate(
            &RateFunction::Curve { t0: 0.0, dt: e.dt, values: k12 },
            &RateFunction::Curve { t0: 0.0, dt: e.dt, values: k21 },
            0.0,
            &grid,
        )
        .unwrap();
        for (m, s) in c.mean.iter().zip(&single) {
            assert_eq!(*m, s.p2);
        }
        for (m, d) in c.mean.iter().zip(&c.mean_field_decoupled) {
            assert_abs_diff_eq!(*m, *d, epsilon = 1e-10);
        }
    }

    #[test]
    fn ensemble_validation() {
        assert!(ensemble(0, None, None, 1.0).validate().is_err());
        let mut e = ensemble(1, None, Some(CouplingNoise { tau_f: 1.0 }), 1.0);
        e.dt = 0.1;
        assert!(e.validate().is_err());
    }
}
