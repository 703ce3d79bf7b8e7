//! Command implementations. Each run produces one or more tables; rows are
//! computed in parallel and assembled in grid order.

use goldenrate::bath::{Lineshape, LineshapeMethod};
use goldenrate::rates::{RateEngine, RateResult, RateSpec};
use goldenrate::stochastic::{
    cumulant_phase_check, mc_avg_population, mc_avg_rate, me_propagate, TrajectoryRateModel,
};
use goldenrate::Error;
use rayon::prelude::*;

use crate::config::{Command, RunConfig};
use crate::error::CliError;
use crate::output::{Cell, Emission, Table};

/// Compute the tables of one resolved run.
pub fn execute(command: Command, run: &RunConfig) -> Result<Vec<Emission>, CliError> {
    match command {
        Command::Lineshape => lineshape(run),
        Command::Rate => {
            let gap = run
                .delta_e
                .ok_or_else(|| CliError::validation("rate: 'delta_e' is required"))?;
            rate_table(run, &[gap])
        }
        Command::Sweep => {
            let grid = run
                .grid
                .delta_e
                .ok_or_else(|| CliError::validation("sweep: 'grid.delta_e' is required"))?
                .values("grid.delta_e")?;
            rate_table(run, &grid)
        }
        Command::McValidate => mc_validate(run),
        Command::MePropagate => me(run),
    }
}

fn build_engine(run: &RunConfig) -> Result<RateEngine, CliError> {
    let ls = &run.lineshape;
    let lineshape = match ls.method {
        LineshapeMethod::AnalyticCoth => Lineshape::analytic(run.bath),
        LineshapeMethod::Quadrature => Lineshape::new(run.bath, ls.method, ls.tol, ls.horizon)?,
    };
    Ok(RateEngine::new(lineshape, run.tolerances)?)
}

fn error_status(e: &Error) -> String {
    match e {
        Error::NotConverged { result, .. } => result.status.as_str().to_string(),
        Error::NonFinite { .. } => "non_finite".into(),
        Error::Model(_) | Error::Validation(_) => "invalid".into(),
    }
}

fn lineshape(run: &RunConfig) -> Result<Vec<Emission>, CliError> {
    let t = run
        .grid
        .t
        .ok_or_else(|| CliError::validation("lineshape: 'grid.t' is required"))?
        .values("grid.t")?;
    if t.iter().any(|&x| x < 0.0) {
        return Err(CliError::validation("lineshape: times must be non-negative"));
    }
    if !(run.lineshape.tol > 0.0) {
        return Err(CliError::validation("lineshape.tol must be positive"));
    }
    let bath = run.bath;
    let tol = run.lineshape.tol;
    let rows: Vec<(f64, num_complex::Complex64, Result<num_complex::Complex64, Error>)> = t
        .par_iter()
        .map(|&t| (t, bath.lineshape_analytic(t), bath.lineshape_quadrature(t, tol)))
        .collect();
    let mut table = Table::new(vec![
        "t [1/omega_c]",
        "C_R_analytic [1]",
        "C_I_analytic [1]",
        "C_R_quad [1]",
        "C_I_quad [1]",
    ]);
    let mut statuses = Vec::with_capacity(rows.len());
    for (t, a, q) in rows {
        let (qr, qi, status) = match q {
            Ok(q) => (q.re, q.im, "ok".to_string()),
            Err(e) => (f64::NAN, f64::NAN, error_status(&e)),
        };
        table.push(vec![t.into(), a.re.into(), a.im.into(), qr.into(), qi.into()]);
        statuses.push(status);
    }
    let limit = match bath.c_r_infinity() {
        goldenrate::LongTimeLimit::Finite(v) => format!("long-time limit of C_R (closed form): {v}"),
        goldenrate::LongTimeLimit::Divergent => "C_R grows without bound".to_string(),
    };
    Ok(vec![Emission { stem: run.name.clone(), table, statuses, notes: vec![limit] }])
}

fn rate_table(run: &RunConfig, gaps: &[f64]) -> Result<Vec<Emission>, CliError> {
    let variant = run.variant.to_variant()?;
    for &gap in gaps {
        RateSpec::new(gap, run.j_sq, variant).validate()?;
    }
    let engine = build_engine(run)?;
    let results: Vec<Result<RateResult, Error>> = gaps
        .par_iter()
        .map(|&gap| engine.evaluate(&RateSpec::new(gap, run.j_sq, variant)))
        .collect();
    let lambda = run.bath.lambda();
    let mut table = Table::new(vec![
        "delta_e [hbar*omega_c]",
        "delta_e_over_lambda [1]",
        "kappa [1]",
        "ln_kappa [1]",
        "k [omega_c]",
        "delta_weight [omega_c]",
        "decomposed_k [omega_c]",
        "error_estimate [omega_c]",
        "t_truncation [1/omega_c]",
        "status",
    ]);
    let mut statuses = Vec::with_capacity(gaps.len());
    for (&gap, r) in gaps.iter().zip(results) {
        let row: Vec<Cell> = match &r {
            Ok(r) => vec![
                gap.into(),
                (gap / lambda).into(),
                r.kappa.into(),
                r.kappa.ln().into(),
                r.k.into(),
                r.delta_weight.into(),
                r.decomposed.map_or(Cell::Text(String::new()), Cell::Num),
                (2.0 * run.j_sq * r.diagnostics.error_estimate).into(),
                r.diagnostics.t_truncation.into(),
                r.diagnostics.status.as_str().into(),
            ],
            Err(e) => {
                let (k, err, t_trunc) = match e {
                    Error::NotConverged { result, .. } => (result.value, result.error_estimate, result.t_truncation),
                    _ => (f64::NAN, f64::NAN, f64::NAN),
                };
                let kappa = goldenrate::kappa_normalize(k, &run.bath, run.j_sq);
                vec![
                    gap.into(),
                    (gap / lambda).into(),
                    kappa.into(),
                    kappa.ln().into(),
                    k.into(),
                    Cell::Text(String::new()),
                    Cell::Text(String::new()),
                    err.into(),
                    t_trunc.into(),
                    error_status(e).into(),
                ]
            }
        };
        statuses.push(match &r {
            Ok(r) => r.diagnostics.status.as_str().to_string(),
            Err(e) => error_status(e),
        });
        table.push(row);
    }
    let notes = vec![format!("variant: {}", serde_json::to_string(&variant).unwrap_or_default())];
    Ok(vec![Emission { stem: run.name.clone(), table, statuses, notes }])
}

fn mc_validate(run: &RunConfig) -> Result<Vec<Emission>, CliError> {
    let mc = run.mc.ok_or_else(|| CliError::validation("mc-validate: the 'mc' section is required"))?;
    if mc.n_traj == 0 {
        return Err(CliError::validation("mc.n_traj must be at least 1"));
    }
    if mc.tau_points == 0 {
        return Err(CliError::validation("mc.tau_points must be at least 1"));
    }
    let engine = build_engine(run)?;
    let ensemble = mc.ensemble(run.seed, mc.horizon, mc.n_traj);
    ensemble.validate()?;
    let n = ensemble.n_steps();
    if n == 0 {
        return Err(CliError::validation("mc.horizon must span at least one time step"));
    }
    let mut out = Vec::new();

    // Cumulant check of the gap-noise phase factor.
    let mut lags: Vec<usize> = (1..=mc.tau_points)
        .map(|i| ((i * n) as f64 / mc.tau_points as f64).round() as usize)
        .filter(|&m| m > 0)
        .collect();
    lags.dedup();
    let taus: Vec<f64> = lags.iter().map(|&m| m as f64 * ensemble.dt).collect();
    let points = cumulant_phase_check(&ensemble, &taus)?;
    let mut table = Table::new(vec![
        "tau [1/omega_c]",
        "mc_re [1]",
        "mc_im [1]",
        "se_re [1]",
        "se_im [1]",
        "closed_form [1]",
        "within_3se",
    ]);
    let mut within = 0;
    for p in &points {
        let ok = p.within(3.0);
        within += ok as usize;
        table.push(vec![
            p.tau.into(),
            p.mc_re.into(),
            p.mc_im.into(),
            p.se_re.into(),
            p.se_im.into(),
            p.closed_form.into(),
            Cell::Text(if ok { "1" } else { "0" }.into()),
        ]);
    }
    out.push(Emission {
        stem: format!("{}_cumulant", run.name),
        statuses: vec!["ok".into(); points.len()],
        notes: vec![format!("{within} of {} lags within 3 standard errors", points.len())],
        table,
    });

    // Ensemble-averaged rate at t_eval.
    let model = TrajectoryRateModel::for_ensemble(engine.clone(), mc.mean_gap, run.j_sq, &ensemble)?;
    let t_eval = mc.t_eval.unwrap_or(n as f64 * ensemble.dt);
    let rate = mc_avg_rate(&ensemble, &model, t_eval)?;
    let fluct = ensemble.fluctuation_model();
    let closed = |gap: f64| engine.m_fgr_2(gap, run.j_sq, fluct).map(|r| r.k);
    let (c12, c21) = (closed(mc.mean_gap), closed(-mc.mean_gap));
    let mut table = Table::new(vec![
        "t_eval [1/omega_c]",
        "k12_mc [omega_c]",
        "k12_se [omega_c]",
        "k12_closed_form [omega_c]",
        "k21_mc [omega_c]",
        "k21_se [omega_c]",
        "k21_closed_form [omega_c]",
        "status",
    ]);
    let status = match (&c12, &c21) {
        (Ok(_), Ok(_)) if rate.k12.warning || rate.k21.warning => "warning".to_string(),
        (Ok(_), Ok(_)) => "ok".to_string(),
        (Err(e), _) | (_, Err(e)) => error_status(e),
    };
    table.push(vec![
        t_eval.into(),
        rate.k12.mean.into(),
        rate.k12.standard_error.into(),
        c12.as_ref().copied().unwrap_or(f64::NAN).into(),
        rate.k21.mean.into(),
        rate.k21.standard_error.into(),
        c21.as_ref().copied().unwrap_or(f64::NAN).into(),
        status.clone().into(),
    ]);
    let mut notes = Vec::new();
    if rate.k12.warning || rate.k21.warning {
        notes.push("standard error exceeds 10% of the mean; increase n_traj".into());
    }
    out.push(Emission { stem: format!("{}_rate", run.name), table, statuses: vec![status], notes });

    // Population dynamics.
    if let Some(pop) = mc.population {
        if pop.points < 2 {
            return Err(CliError::validation("mc.population.points must be at least 2"));
        }
        let j_sq = pop.j_sq.unwrap_or(run.j_sq);
        let pens = mc.ensemble(run.seed, pop.horizon, pop.n_traj.unwrap_or(mc.n_traj));
        pens.validate()?;
        let pmodel = TrajectoryRateModel::for_ensemble(engine, mc.mean_gap, j_sq, &pens)?;
        let last = pens.n_steps() as f64 * pens.dt;
        let grid: Vec<f64> = (0..pop.points)
            .map(|i| if i + 1 == pop.points { last } else { last * i as f64 / (pop.points - 1) as f64 })
            .collect();
        let curves = mc_avg_population(&pens, &pmodel, &grid)?;
        let mut table = Table::new(vec![
            "t [1/omega_c]",
            "p2_mc [1]",
            "p2_se [1]",
            "p2_mean_field_constant [1]",
            "p2_mean_field_decoupled [1]",
        ]);
        for i in 0..grid.len() {
            table.push(vec![
                curves.t[i].into(),
                curves.mean[i].into(),
                curves.standard_error[i].into(),
                curves.mean_field_constant[i].into(),
                curves.mean_field_decoupled[i].into(),
            ]);
        }
        out.push(Emission {
            stem: format!("{}_population", run.name),
            statuses: vec!["ok".into(); grid.len()],
            notes: vec![
                format!("trajectories: {}", curves.n_traj),
                format!("negative instantaneous rate samples: {}", curves.negative_rate_points),
                format!("max |p1 + p2 - 1|: {:e}", curves.max_conservation_error),
                format!("max excursion outside [0, 1]: {:e}", curves.max_bound_violation),
            ],
            table,
        });
    }
    Ok(out)
}

fn me(run: &RunConfig) -> Result<Vec<Emission>, CliError> {
    let me = run
        .me
        .as_ref()
        .ok_or_else(|| CliError::validation("me-propagate: the 'me' section is required"))?;
    let t = run
        .grid
        .t
        .ok_or_else(|| CliError::validation("me-propagate: 'grid.t' is required"))?
        .values("grid.t")?;
    let states = me_propagate(&me.k12.to_function(), &me.k21.to_function(), me.p2_0, &t)?;
    let mut table = Table::new(vec!["t [1/omega_c]", "p1 [1]", "p2 [1]"]);
    for s in &states {
        table.push(vec![s.t.into(), s.p1.into(), s.p2.into()]);
    }
    Ok(vec![Emission {
        stem: run.name.clone(),
        statuses: vec!["ok".into(); states.len()],
        notes: Vec::new(),
        table,
    }])
}
