//! Scenario runners for the convergence, uniform-in-time, Euler-rate,
//! concentration and field-bound studies.
//!
//! Each runner returns an [`ExperimentOutcome`]; the verdict logic lives in
//! small pure functions over the result tables.

mod config;
mod output;

pub use config::*;
pub use output::*;

use rayon::prelude::*;
use serde_json::json;

use crate::error::{Error, Result};
use crate::metrics::{
    mean_and_se, slope_fit, tail_probability, w1_1d_unequal, EmpiricalMeasure, SlopeFit,
    TailEstimate, MIN_TAIL_REPLICATIONS,
};
use crate::model::{InitialDistribution, Model};
use crate::noise::child_seed;
use crate::simulate::{
    refine_with_monitors, run_coupled_poc_sweep, run_particle_system, sampled_states,
    CoupledRunConfig, DeviationSeries, EulerConfig, FieldMethod, MonitorSummary, ParticleSystem,
    ReferenceSeed, RunRecord, DEFAULT_RECORDING_CAP, DEFAULT_REFINEMENT_CAP,
};

/// Acceptance band for the log-log slope of the deviation against `N`.
pub const POC_SLOPE_BAND: (f64, f64) = (-1.3, -0.7);
/// Acceptance band for the log-log slope of the mean squared error against `epsilon`.
pub const EULER_SLOPE_BAND: (f64, f64) = (0.7, 1.3);
pub const PLATEAU_RATIO_MAX: f64 = 1.5;
pub const POC_BOUND_SLACK: f64 = 4.0;
pub const EULER_LATE_EARLY_MAX: f64 = 2.0;
pub const CONCENTRATION_R2_MIN: f64 = 0.8;
/// Minimum replications for moment experiments.
pub const MIN_MOMENT_REPLICATIONS: usize = 8;

/// Run `experiment` on `sc`.
pub fn run_experiment(experiment: Experiment, sc: &ScenarioConfig) -> Result<ExperimentOutcome> {
    match experiment {
        Experiment::Constants => exp_constants(sc),
        Experiment::Simulate => exp_simulate(sc),
        Experiment::PocFinite => exp_poc_finite(sc),
        Experiment::PocUniform => exp_poc_uniform(sc),
        Experiment::EulerRate => exp_euler_rate(sc),
        Experiment::Concentration => exp_concentration(sc),
        Experiment::FieldBounds => exp_field_bounds(sc),
    }
}

fn steps_for(horizon: f64, epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::config(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::config(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let n = (horizon / epsilon).round();
    if (n * epsilon - horizon).abs() > 1e-9 * horizon {
        return Err(Error::config(format!(
            "horizon {horizon} is not a multiple of epsilon {epsilon}"
        )));
    }
    Ok(n as usize)
}

fn base_config(sc: &ScenarioConfig, epsilon: f64, horizon: f64, n: usize) -> Result<EulerConfig> {
    let mut c = EulerConfig::new(epsilon, steps_for(horizon, epsilon)?, n, sc.seed);
    c.grid = sc.grid;
    c.field_method = sc.run.field_method.unwrap_or(FieldMethod::Grid);
    c.noise = sc.run.noise.unwrap_or(true);
    Ok(c)
}

fn replications(sc: &ScenarioConfig, default: usize, min: usize) -> Result<usize> {
    let r = sc.sweep.replications.unwrap_or(default);
    if r < min {
        return Err(Error::Precondition(format!(
            "this experiment needs at least {min} replications, got {r}"
        )));
    }
    Ok(r)
}

fn n_values(sc: &ScenarioConfig, default: &[usize]) -> Result<Vec<usize>> {
    let ns = sc
        .sweep
        .n_values
        .clone()
        .unwrap_or_else(|| default.to_vec());
    if ns.is_empty() || ns.contains(&0) {
        return Err(Error::config(
            "sweep.n_values must be a nonempty list of positive sizes",
        ));
    }
    Ok(ns)
}

fn stream_seeds(sc: &ScenarioConfig, r: usize, with_reference: bool) -> Vec<ChildSeed> {
    (0..r as u64)
        .map(|k| ChildSeed {
            replication: k,
            stream: child_seed(sc.seed, "replication", k),
            reference: with_reference.then(|| child_seed(sc.seed, "reference", k)),
        })
        .collect()
}

fn require_assumption(model: &Model) -> Result<crate::model::AssumptionReport> {
    let report = model.assumption()?;
    if !report.satisfied {
        return Err(Error::Precondition(format!(
            "the convexity condition v* > lambda fails: {}",
            serde_json::to_string(&report)?
        )));
    }
    Ok(report)
}

fn monitor_verdict(m: &MonitorSummary) -> Verdict {
    let detail = match m.first_violation {
        Some((step, x, g, b)) => format!(
            "{} violations; first at step {step}, x = {x}: |grad h| = {g} > {b}",
            m.violations()
        ),
        None => format!(
            "max |grad h| = {:.6}, max excess = {:.2e}",
            m.max_gradient, m.max_gradient_excess
        ),
    };
    Verdict::new("field_bounds", m.violations() == 0, detail)
}

pub fn exp_constants(sc: &ScenarioConfig) -> Result<ExperimentOutcome> {
    let model = sc.model()?;
    let constants = model.constants()?;
    let assumption = model.assumption()?;
    let mut t = CsvTable::new("constants/v1", &["name", "value"]);
    let mut row = |name: &str, v: f64| t.push(vec![name.into(), v.into()]);
    row("v_star", constants.v_star);
    row("lambda", constants.lambda_threshold);
    row("c1", constants.c1);
    row("c2", constants.c2);
    row("c3", constants.c3);
    row("lambda_tilde", constants.lambda_tilde);
    row("c2_tilde", constants.c2_tilde);
    row("c3_tilde", constants.c3_tilde);
    row("r1", constants.r1);
    row("r2", constants.r2);
    row(
        "poc_bound_const",
        constants.poc_bound_const.unwrap_or(f64::NAN),
    );
    row("epsilon0", model.epsilon0());
    Ok(ExperimentOutcome {
        experiment: Experiment::Constants,
        tables: vec![("results.csv".into(), t)],
        verdicts: vec![],
        summary: json!({ "constants": constants, "assumption": assumption }),
        child_seeds: vec![],
    })
}

/// Tables of a single run: `moments.csv`, `trajectory.csv` and field snapshots.
pub fn run_tables(rec: &RunRecord) -> Vec<(String, CsvTable)> {
    let d = rec.dim;
    let coord_names: Vec<String> = if d == 1 {
        vec!["x".into()]
    } else {
        (1..=d).map(|k| format!("x{k}")).collect()
    };
    let mean_names: Vec<String> = if d == 1 {
        vec!["mean".into()]
    } else {
        (1..=d).map(|k| format!("mean_x{k}")).collect()
    };

    let mut header: Vec<&str> = vec!["step", "t"];
    header.extend(mean_names.iter().map(String::as_str));
    header.push("m2");
    let mut moments = CsvTable::new("moments/v1", &header);
    for r in &rec.moments {
        let mut row: Vec<Cell> = vec![r.step.into(), r.t.into()];
        row.extend(r.mean.iter().map(|&m| Cell::from(m)));
        row.push(r.m2.into());
        moments.push(row);
    }
    let mut tables = vec![("moments.csv".to_string(), moments)];

    if let Some(frames) = &rec.trajectory {
        let mut header: Vec<&str> = vec!["step", "t", "particle_id"];
        header.extend(coord_names.iter().map(String::as_str));
        let mut traj = CsvTable::new("trajectory/v1", &header);
        for (step, frame) in frames.iter().enumerate() {
            for (i, p) in frame.chunks_exact(d).enumerate() {
                let mut row: Vec<Cell> =
                    vec![step.into(), (step as f64 * rec.epsilon).into(), i.into()];
                row.extend(p.iter().map(|&v| Cell::from(v)));
                traj.push(row);
            }
        }
        tables.push(("trajectory.csv".into(), traj));
    }
    for s in &rec.snapshots {
        let mut t = CsvTable::new("field_snapshot/v1", &["x", "h", "theta", "grad_h"]);
        for j in 0..s.x.len() {
            t.push(vec![
                s.x[j].into(),
                s.h[j].into(),
                s.theta[j].into(),
                s.grad_h[j].into(),
            ]);
        }
        tables.push((format!("field_snapshots/step_{:06}.csv", s.step), t));
    }
    tables
}

pub fn exp_simulate(sc: &ScenarioConfig) -> Result<ExperimentOutcome> {
    let model = sc.model()?;
    let mut cfg = base_config(
        sc,
        sc.run.epsilon.unwrap_or(0.01),
        sc.run.horizon.unwrap_or(5.0),
        sc.run.n_particles.unwrap_or(64),
    )?;
    cfg.snapshot_steps = sc.run.snapshot_steps.clone();
    cfg.record_trajectory = sc.run.record_trajectory.unwrap_or(true);
    let rec = run_particle_system(&cfg, &model)?;
    let mut summary = json!({ "monitors": rec.monitors, "final_second_moment": rec.moments.last().map(|m| m.m2) });
    if let Some(level) = rec.monitors.second_moment_level {
        summary["second_moment_overshoot"] =
            json!((rec.monitors.max_second_moment - level).max(0.0));
    }
    Ok(ExperimentOutcome {
        experiment: Experiment::Simulate,
        tables: run_tables(&rec),
        verdicts: vec![monitor_verdict(&rec.monitors)],
        summary,
        child_seeds: vec![ChildSeed {
            replication: 0,
            stream: cfg.stream_seed(),
            reference: None,
        }],
    })
}

/// Slope of `log sup deviation` against `log N` and its verdict. Fewer than
/// three sizes give no fit; identically zero deviations mean no coupling.
pub fn poc_finite_verdict(ns: &[usize], sups: &[f64]) -> (Verdict, Option<SlopeFit>) {
    const NAME: &str = "poc_slope";
    if sups.iter().all(|&s| s == 0.0) {
        return (
            Verdict::skipped(NAME, "decoupled: all deviations are zero"),
            None,
        );
    }
    if ns.len() < 3 {
        return (
            Verdict::skipped(NAME, "fewer than three system sizes; table only"),
            None,
        );
    }
    if sups.iter().any(|&s| !(s > 0.0)) {
        return (
            Verdict::new(
                NAME,
                false,
                "some deviations are zero; cannot fit a power law",
            ),
            None,
        );
    }
    let x: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = sups.iter().map(|s| s.ln()).collect();
    match slope_fit(&x, &y) {
        Ok(f) => {
            let ok = f.slope >= POC_SLOPE_BAND.0 && f.slope <= POC_SLOPE_BAND.1;
            let detail = format!(
                "slope {:.4} (R^2 {:.4}), band [{}, {}]",
                f.slope, f.r_squared, POC_SLOPE_BAND.0, POC_SLOPE_BAND.1
            );
            (Verdict::new(NAME, ok, detail), Some(f))
        }
        Err(e) => (Verdict::new(NAME, false, e.to_string()), None),
    }
}

fn coupled_config(sc: &ScenarioConfig, ns: &[usize], horizon: f64) -> Result<CoupledRunConfig> {
    let eps = sc.run.epsilon.unwrap_or(0.01);
    let max_n = *ns.iter().max().unwrap();
    let mut system = base_config(sc, eps, horizon, max_n)?;
    system.field_method = FieldMethod::Grid;
    Ok(CoupledRunConfig {
        system,
        n_ref: sc.sweep.n_ref.unwrap_or(16 * max_n),
        reference_seed: sc
            .sweep
            .reference_seed
            .unwrap_or(ReferenceSeed::Independent),
        recording_cap: DEFAULT_RECORDING_CAP,
    })
}

pub fn exp_poc_finite(sc: &ScenarioConfig) -> Result<ExperimentOutcome> {
    let model = sc.model()?;
    let ns = n_values(sc, &[32, 64, 128, 256])?;
    let r = replications(sc, 16, MIN_MOMENT_REPLICATIONS)?;
    let cc = coupled_config(sc, &ns, sc.run.horizon.unwrap_or(5.0))?;
    let series = run_coupled_poc_sweep(&cc, &ns, r, &model)?;

    let mut table = CsvTable::new(
        "poc_finite/v1",
        &[
            "n",
            "sup_deviation",
            "std_error",
            "final_deviation",
            "final_std_error",
        ],
    );
    let mut curves = CsvTable::new(
        "poc_curves/v1",
        &["n", "step", "t", "mean_deviation", "std_error"],
    );
    let mut sups = Vec::new();
    let mut monitors = MonitorSummary::default();
    for s in &series {
        let last = s.mean.len() - 1;
        let (sup, se) = s.sup_over(0, last);
        sups.push(sup);
        table.push(vec![
            s.n.into(),
            sup.into(),
            se.into(),
            s.mean[last].into(),
            s.std_error[last].into(),
        ]);
        for (k, (m, e)) in s.mean.iter().zip(&s.std_error).enumerate() {
            curves.push(vec![
                s.n.into(),
                k.into(),
                (k as f64 * s.epsilon).into(),
                (*m).into(),
                (*e).into(),
            ]);
        }
        monitors.merge(&s.monitors);
    }
    let (verdict, fit) = poc_finite_verdict(&ns, &sups);
    let mut summary =
        json!({ "n_ref": cc.n_ref, "replications": r, "fit": fit, "monitors": monitors });
    if let Some(alt) = sc.sweep.n_ref_alt {
        let alt_cc = CoupledRunConfig {
            n_ref: alt,
            ..cc.clone()
        };
        let alt_series = run_coupled_poc_sweep(&alt_cc, &ns, r, &model)?;
        let alt_sups: Vec<f64> = alt_series
            .iter()
            .map(|s| s.sup_over(0, s.mean.len() - 1).0)
            .collect();
        summary["n_ref_sensitivity"] =
            json!({ "n_ref": alt, "sups": alt_sups, "fit": poc_finite_verdict(&ns, &alt_sups).1 });
    }
    Ok(ExperimentOutcome {
        experiment: Experiment::PocFinite,
        tables: vec![("results.csv".into(), table), ("curves.csv".into(), curves)],
        verdicts: vec![verdict, monitor_verdict(&monitors)],
        summary,
        child_seeds: stream_seeds(sc, r, true),
    })
}

/// Plateau check: the largest mean deviation over the second half of the
/// run is at most [`PLATEAU_RATIO_MAX`] times the largest over `[T/4, T/2]`.
pub fn plateau_verdict(mean: &[f64]) -> (Verdict, f64) {
    let n = mean.len() - 1;
    let sup = |a: usize, b: usize| mean[a..=b].iter().fold(0.0f64, |m, &v| m.max(v));
    let (early, late) = (sup(n / 4, n / 2), sup(n / 2, n));
    if early == 0.0 && late == 0.0 {
        return (
            Verdict::new("plateau", true, "deviation identically zero"),
            0.0,
        );
    }
    let ratio = late / early;
    let detail = format!("sup[T/2,T] / sup[T/4,T/2] = {ratio:.4} (max {PLATEAU_RATIO_MAX})");
    (
        Verdict::new("plateau", ratio <= PLATEAU_RATIO_MAX, detail),
        ratio,
    )
}

/// `N sup_t deviation <= slack * poc_bound_const^2`.
pub fn poc_bound_verdict(n: usize, sup: f64, bound_const: f64) -> Verdict {
    let lhs = n as f64 * sup;
    let rhs = POC_BOUND_SLACK * bound_const * bound_const;
    Verdict::new(
        "poc_bound",
        lhs <= rhs,
        format!("N * sup deviation = {lhs:.6} vs {POC_BOUND_SLACK} * C^2 = {rhs:.4}"),
    )
}

pub fn exp_poc_uniform(sc: &ScenarioConfig) -> Result<ExperimentOutcome> {
    let model = sc.model()?;
    let assumption = require_assumption(&model)?;
    let constants = model.constants()?;
    let bound_const = constants.poc_bound_const.ok_or_else(|| {
        Error::Precondition("the uniform bound constant is unavailable (lambda_tilde <= r1)".into())
    })?;
    let ns = n_values(sc, &[128])?;
    let r = replications(sc, 16, MIN_MOMENT_REPLICATIONS)?;
    let cc = coupled_config(sc, &ns, sc.run.horizon.unwrap_or(20.0))?;
    let series: Vec<DeviationSeries> = run_coupled_poc_sweep(&cc, &ns, r, &model)?;

    let mut table = CsvTable::new(
        "poc_uniform/v1",
        &[
            "n",
            "step",
            "t",
            "mean_deviation",
            "std_error",
            "scaled_deviation",
            "bound_profile",
        ],
    );
    let mut verdicts = Vec::new();
    let mut per_n = Vec::new();
    let mut monitors = MonitorSummary::default();
    for s in &series {
        for (k, (m, e)) in s.mean.iter().zip(&s.std_error).enumerate() {
            let t = k as f64 * s.epsilon;
            let profile = constants.poc_bound_profile(t).unwrap_or(f64::NAN);
            table.push(vec![
                s.n.into(),
                k.into(),
                t.into(),
                (*m).into(),
                (*e).into(),
                (s.n as f64 * m).into(),
                (profile * profile).into(),
            ]);
        }
        let (mut plateau, ratio) = plateau_verdict(&s.mean);
        let sup = s.sup_over(0, s.mean.len() - 1).0;
        let mut bound = poc_bound_verdict(s.n, sup, bound_const);
        plateau.name = format!("plateau_n{}", s.n);
        bound.name = format!("poc_bound_n{}", s.n);
        per_n.push(json!({ "n": s.n, "plateau_ratio": ratio, "scaled_sup": s.n as f64 * sup }));
        verdicts.push(plateau);
        verdicts.push(bound);
        monitors.merge(&s.monitors);
    }
    verdicts.push(monitor_verdict(&monitors));
    Ok(ExperimentOutcome {
        experiment: Experiment::PocUniform,
        tables: vec![("results.csv".into(), table)],
        verdicts,
        summary: json!({
            "assumption": assumption, "poc_bound_const": bound_const, "n_ref": cc.n_ref,
            "replications": r, "per_n": per_n, "monitors": monitors,
        }),
        child_seeds: stream_seeds(sc, r, true),
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EulerRow {
    pub epsilon: f64,
    pub mse_early: f64,
    pub se_early: f64,
    pub mse_late: f64,
    pub se_late: f64,
}

/// Slopes of `log MSE` against `log epsilon` at both times, and the
/// late/early ratio per step size.
pub fn euler_verdicts(rows: &[EulerRow]) -> Vec<Verdict> {
    let x: Vec<f64> = rows.iter().map(|r| r.epsilon.ln()).collect();
    let band = |name: &str, y: Vec<f64>| match slope_fit(&x, &y) {
        Ok(f) => Verdict::new(
            name,
            f.slope >= EULER_SLOPE_BAND.0 && f.slope <= EULER_SLOPE_BAND.1,
            format!(
                "slope {:.4} (R^2 {:.4}), band [{}, {}]",
                f.slope, f.r_squared, EULER_SLOPE_BAND.0, EULER_SLOPE_BAND.1
            ),
        ),
        Err(e) => Verdict::new(name, false, e.to_string()),
    };
    let worst = rows
        .iter()
        .map(|r| r.mse_late / r.mse_early)
        .fold(0.0f64, f64::max);
    vec![
        band(
            "euler_slope_early",
            rows.iter().map(|r| r.mse_early.ln()).collect(),
        ),
        band(
            "euler_slope_late",
            rows.iter().map(|r| r.mse_late.ln()).collect(),
        ),
        Verdict::new(
            "euler_uniform",
            worst <= EULER_LATE_EARLY_MAX,
            format!("max late/early MSE ratio {worst:.4} (max {EULER_LATE_EARLY_MAX})"),
        ),
    ]
}

pub fn exp_euler_rate(sc: &ScenarioConfig) -> Result<ExperimentOutcome> {
    let model = sc.model()?;
    let assumption = require_assumption(&model)?;
    let eps0 = model.epsilon0();
    let mut eps = sc
        .sweep
        .epsilon_values
        .clone()
        .unwrap_or_else(|| vec![0.04, 0.02, 0.01, 0.005]);
    if eps.len() < 3 {
        return Err(Error::config(
            "sweep.epsilon_values needs at least three step sizes",
        ));
    }
    if let Some(e) = eps.iter().find(|&&e| e > eps0) {
        return Err(Error::Precondition(format!(
            "epsilon {e} exceeds the stability threshold {eps0}"
        )));
    }
    eps.sort_by(|a, b| b.total_cmp(a));
    let k = sc.sweep.refinement.unwrap_or(4);
    let finest = eps.last().copied().unwrap() / (1u64 << k) as f64;
    let n = sc.run.n_particles.unwrap_or(64);
    let r = replications(sc, 16, MIN_MOMENT_REPLICATIONS)?;
    let horizon = sc.run.horizon.unwrap_or(4.0);

    let mut rows = Vec::new();
    let mut monitors = MonitorSummary::default();
    for &e in &eps {
        let level = (e / finest).log2().round();
        if ((level.exp2() * finest) - e).abs() > 1e-9 * e {
            return Err(Error::config(format!(
                "epsilon {e} is not a dyadic multiple of {finest}"
            )));
        }
        let mut cfg = base_config(sc, e, horizon, n)?;
        if cfg.n_steps % 4 != 0 {
            return Err(Error::config(
                "the step count of every epsilon must be divisible by 4",
            ));
        }
        cfg.noise_level = level as u32;
        let per_rep: Vec<(f64, f64, MonitorSummary)> = (0..r as u64)
            .into_par_iter()
            .map(|rep| {
                let mut c = cfg.clone();
                c.replication = rep;
                let (coarse, mut m) = sampled_states(&c, 1, &model)?;
                let (fine, mf) = refine_with_monitors(&c, k, &model, DEFAULT_REFINEMENT_CAP)?;
                m.merge(&mf);
                let mse = |s: usize| {
                    coarse[s]
                        .iter()
                        .zip(&fine[s])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        / coarse[s].len() as f64
                };
                Ok((mse(c.n_steps / 4), mse(c.n_steps), m))
            })
            .collect::<Result<Vec<_>>>()?;
        let early: Vec<f64> = per_rep.iter().map(|p| p.0).collect();
        let late: Vec<f64> = per_rep.iter().map(|p| p.1).collect();
        per_rep.iter().for_each(|p| monitors.merge(&p.2));
        let ((mse_early, se_early), (mse_late, se_late)) =
            (mean_and_se(&early), mean_and_se(&late));
        rows.push(EulerRow {
            epsilon: e,
            mse_early,
            se_early,
            mse_late,
            se_late,
        });
    }
    let mut table = CsvTable::new(
        "euler_rate/v1",
        &[
            "epsilon",
            "mse_early",
            "se_early",
            "mse_late",
            "se_late",
            "late_early_ratio",
        ],
    );
    for row in &rows {
        table.push(vec![
            row.epsilon.into(),
            row.mse_early.into(),
            row.se_early.into(),
            row.mse_late.into(),
            row.se_late.into(),
            (row.mse_late / row.mse_early).into(),
        ]);
    }
    let mut verdicts = euler_verdicts(&rows);
    verdicts.push(monitor_verdict(&monitors));
    Ok(ExperimentOutcome {
        experiment: Experiment::EulerRate,
        tables: vec![("results.csv".into(), table)],
        verdicts,
        summary: json!({
            "assumption": assumption, "refinement": k, "n_particles": n, "replications": r,
            "horizon": horizon, "early_time": horizon / 4.0, "rows": rows, "monitors": monitors,
        }),
        child_seeds: stream_seeds(sc, r, false),
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TailRow {
    pub time: f64,
    pub n: usize,
    pub eps: f64,
    pub tail: TailEstimate,
}

/// Diagnostics of one observation time: tails do not increase significantly
/// in `N` at fixed `eps`, and `-log tail` grows linearly in `N eps^2`.
pub fn concentration_verdicts(label: &str, rows: &[TailRow]) -> (Vec<Verdict>, Option<SlopeFit>) {
    let mut bad = Vec::new();
    let mut eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    eps.sort_by(f64::total_cmp);
    eps.dedup();
    for &e in &eps {
        let mut at: Vec<&TailRow> = rows.iter().filter(|r| r.eps == e).collect();
        at.sort_by_key(|r| r.n);
        for w in at.windows(2) {
            if w[1].tail.lower > w[0].tail.upper {
                bad.push(format!("eps {e}: N {} -> {}", w[0].n, w[1].n));
            }
        }
    }
    let monotone = Verdict::new(
        &format!("tail_monotone_{label}"),
        bad.is_empty(),
        if bad.is_empty() {
            "no significant increase in N".to_string()
        } else {
            bad.join("; ")
        },
    );
    let usable: Vec<&TailRow> = rows
        .iter()
        .filter(|r| r.tail.estimate > 0.0 && r.tail.estimate < 1.0)
        .collect();
    let name = format!("tail_exponent_{label}");
    if usable.len() < 3 {
        return (
            vec![
                monotone,
                Verdict::new(
                    &name,
                    false,
                    format!("only {} tails strictly inside (0, 1)", usable.len()),
                ),
            ],
            None,
        );
    }
    let x: Vec<f64> = usable.iter().map(|r| r.n as f64 * r.eps * r.eps).collect();
    let y: Vec<f64> = usable.iter().map(|r| -r.tail.estimate.ln()).collect();
    match slope_fit(&x, &y) {
        Ok(f) => {
            let ok = f.slope > 0.0 && f.r_squared >= CONCENTRATION_R2_MIN;
            let detail = format!(
                "slope {:.4}, R^2 {:.4} over {} points (need slope > 0, R^2 >= {CONCENTRATION_R2_MIN})",
                f.slope, f.r_squared, usable.len()
            );
            (vec![monotone, Verdict::new(&name, ok, detail)], Some(f))
        }
        Err(e) => (
            vec![monotone, Verdict::new(&name, false, e.to_string())],
            None,
        ),
    }
}

pub fn exp_concentration(sc: &ScenarioConfig) -> Result<ExperimentOutcome> {
    let model = sc.model()?;
    if model.dim() != 1 {
        return Err(Error::Unsupported(
            "the concentration experiment is one-dimensional".into(),
        ));
    }
    if !matches!(
        model.mu0,
        InitialDistribution::Gaussian { .. }
            | InitialDistribution::PointMass { .. }
            | InitialDistribution::Uniform { .. }
    ) {
        return Err(Error::Precondition(
            "mu0 needs a finite square-exponential moment".into(),
        ));
    }
    let ns = n_values(sc, &[10, 20, 40])?;
    let thresholds = sc
        .sweep
        .tail_epsilons
        .clone()
        .unwrap_or_else(|| vec![0.15, 0.2, 0.25]);
    if thresholds.is_empty() || thresholds.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::config("sweep.tail_epsilons must be positive"));
    }
    let r = replications(sc, 200, MIN_TAIL_REPLICATIONS)?;
    let eps = sc.run.epsilon.unwrap_or(0.02);
    let horizon = sc.run.horizon.unwrap_or(10.0);
    let fixed_time = sc.sweep.fixed_time.unwrap_or(1.0);
    let fixed_step = steps_for(fixed_time, eps)?;
    let base = base_config(sc, eps, horizon, 1)?;
    if fixed_step > base.n_steps {
        return Err(Error::config("sweep.fixed_time exceeds the horizon"));
    }
    let long_time = model.assumption()?.satisfied;
    let n_ref = sc
        .sweep
        .n_ref
        .unwrap_or((16 * ns.iter().max().unwrap()).max(4096));

    // Two independent large ensembles: the first is the proxy for the limit
    // law, their distance estimates the proxy bias.
    let proxies: Vec<(Vec<Vec<f64>>, MonitorSummary)> = (0..2u64)
        .into_par_iter()
        .map(|k| {
            let mut c = base.clone();
            c.n_particles = n_ref;
            c.seed = child_seed(sc.seed, "reference", k);
            states_at(&c, &[fixed_step, base.n_steps], &model)
        })
        .collect::<Result<Vec<_>>>()?;
    let proxy: Vec<EmpiricalMeasure> = proxies[0]
        .0
        .iter()
        .map(|p| EmpiricalMeasure::from_1d(p))
        .collect::<Result<_>>()?;
    let bias = proxy
        .iter()
        .zip(&proxies[1].0)
        .map(|(p, other)| Ok(w1_1d_unequal(p, &EmpiricalMeasure::from_1d(other)?)?.value))
        .collect::<Result<Vec<f64>>>()?;
    let mut monitors = MonitorSummary::default();
    proxies.iter().for_each(|p| monitors.merge(&p.1));

    let mut rows = Vec::new();
    for &n in &ns {
        let per_rep: Vec<(f64, f64, MonitorSummary)> = (0..r as u64)
            .into_par_iter()
            .map(|rep| {
                let mut c = base.clone();
                c.n_particles = n;
                c.replication = rep;
                let (states, m) = states_at(&c, &[fixed_step, base.n_steps], &model)?;
                let w = |k: usize| -> Result<f64> {
                    Ok(w1_1d_unequal(&EmpiricalMeasure::from_1d(&states[k])?, &proxy[k])?.value)
                };
                Ok((w(0)?, w(1)?, m))
            })
            .collect::<Result<Vec<_>>>()?;
        per_rep.iter().for_each(|p| monitors.merge(&p.2));
        let (w_fixed, w_long): (Vec<f64>, Vec<f64>) = per_rep.iter().map(|p| (p.0, p.1)).unzip();
        for &e in &thresholds {
            rows.push(TailRow {
                time: fixed_time,
                n,
                eps: e,
                tail: tail_probability(&w_fixed, e)?,
            });
            rows.push(TailRow {
                time: horizon,
                n,
                eps: e,
                tail: tail_probability(&w_long, e)?,
            });
        }
    }
    let mut table = CsvTable::new(
        "concentration/v1",
        &[
            "t",
            "n",
            "eps",
            "n_eps2",
            "tail",
            "lower",
            "upper",
            "exceedances",
            "replications",
        ],
    );
    for row in &rows {
        table.push(vec![
            row.time.into(),
            row.n.into(),
            row.eps.into(),
            (row.n as f64 * row.eps * row.eps).into(),
            row.tail.estimate.into(),
            row.tail.lower.into(),
            row.tail.upper.into(),
            row.tail.exceedances.into(),
            row.tail.replications.into(),
        ]);
    }
    let fixed_rows: Vec<TailRow> = rows
        .iter()
        .filter(|r| r.time == fixed_time)
        .cloned()
        .collect();
    let long_rows: Vec<TailRow> = rows.iter().filter(|r| r.time == horizon).cloned().collect();
    let (mut verdicts, fit_fixed) = concentration_verdicts("fixed_time", &fixed_rows);
    let fit_long = if long_time {
        let (v, f) = concentration_verdicts("long_time", &long_rows);
        verdicts.extend(v);
        f
    } else {
        verdicts.push(Verdict::skipped(
            "tail_long_time",
            "convexity condition fails; long-time variant not applicable",
        ));
        None
    };
    verdicts.push(monitor_verdict(&monitors));
    Ok(ExperimentOutcome {
        experiment: Experiment::Concentration,
        tables: vec![("results.csv".into(), table)],
        verdicts,
        summary: json!({
            "n_ref": n_ref, "replications": r, "fixed_time": fixed_time, "horizon": horizon,
            "proxy_bias_w1": { "fixed_time": bias[0], "long_time": bias[1] },
            "fit_fixed_time": fit_fixed, "fit_long_time": fit_long, "monitors": monitors,
        }),
        child_seeds: stream_seeds(sc, r, false),
    })
}

/// Positions at the listed steps (ascending) of one run.
fn states_at(
    cfg: &EulerConfig,
    steps: &[usize],
    model: &Model,
) -> Result<(Vec<Vec<f64>>, MonitorSummary)> {
    let mut sys = ParticleSystem::new(model, cfg.clone())?;
    let mut out = Vec::with_capacity(steps.len());
    for &s in steps {
        while sys.ensemble().step < s {
            sys.step()?;
        }
        out.push(sys.ensemble().positions.clone());
    }
    Ok((out, sys.monitors().clone()))
}

pub fn exp_field_bounds(sc: &ScenarioConfig) -> Result<ExperimentOutcome> {
    let model = sc.model()?;
    let n = sc.run.n_particles.unwrap_or(256);
    let mut cfg = base_config(
        sc,
        sc.run.epsilon.unwrap_or(0.01),
        sc.run.horizon.unwrap_or(10.0),
        n,
    )?;
    let mut table = CsvTable::new(
        "field_bounds/v1",
        &[
            "step",
            "t",
            "max_grad_h",
            "grad_bound",
            "max_lipschitz_quotient",
            "lipschitz_bound",
        ],
    );
    let monitors = if model.dim() == 1 && cfg.field_method == FieldMethod::Grid {
        let mut sys = ParticleSystem::new(&model, cfg.clone())?;
        loop {
            let step = sys.ensemble().step;
            let t = step as f64 * cfg.epsilon;
            let grad = sys.field().unwrap().gradient();
            let (dom, safe) = (grad.domain, grad.safe_half_width);
            let inside: Vec<(f64, f64)> = grad
                .values
                .iter()
                .enumerate()
                .map(|(j, &g)| (dom.node(j), g))
                .filter(|(x, _)| x.abs() <= safe)
                .collect();
            let max_grad = inside.iter().fold(0.0f64, |m, p| m.max(p.1.abs()));
            let max_lip = inside.windows(2).fold(0.0f64, |m, w| {
                m.max((w[1].1 - w[0].1).abs() / dom.spacing())
            });
            table.push(vec![
                step.into(),
                t.into(),
                max_grad.into(),
                model.field_gradient_bound(t)?.into(),
                max_lip.into(),
                model.field_lipschitz_bound(t)?.into(),
            ]);
            if step == cfg.n_steps {
                break;
            }
            sys.drift_grid()?;
            sys.step()?;
        }
        sys.monitors().clone()
    } else {
        cfg.field_method = FieldMethod::Direct;
        let rec = run_particle_system(&cfg, &model)?;
        table.push(vec![
            cfg.n_steps.into(),
            cfg.horizon().into(),
            rec.monitors.max_gradient.into(),
            model.field_gradient_bound(0.0)?.into(),
            f64::NAN.into(),
            model.field_lipschitz_bound(0.0)?.into(),
        ]);
        rec.monitors
    };
    let verdicts = vec![
        monitor_verdict(&monitors),
        Verdict::new(
            "lipschitz_bound",
            monitors.lipschitz_violations == 0,
            format!(
                "max quotient {:.6} vs bound {:.6}",
                monitors.max_lipschitz_quotient, monitors.lipschitz_bound
            ),
        ),
    ];
    Ok(ExperimentOutcome {
        experiment: Experiment::FieldBounds,
        tables: vec![("results.csv".into(), table)],
        verdicts,
        summary: json!({ "monitors": monitors, "limit_bound": model.field_gradient_bound(f64::MAX)? }),
        child_seeds: vec![ChildSeed {
            replication: 0,
            stream: cfg.stream_seed(),
            reference: None,
        }],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(sc: &mut ScenarioConfig) {
        sc.run.epsilon = Some(0.05);
        sc.sweep.replications = Some(8);
    }

    #[test]
    fn poc_verdict_logic() {
        let ns = [32, 64, 128, 256];
        let sups: Vec<f64> = ns.iter().map(|&n| 0.3 / n as f64).collect();
        let (v, f) = poc_finite_verdict(&ns, &sups);
        assert_eq!(v.status, Status::Pass);
        assert!((f.unwrap().slope + 1.0).abs() < 1e-12);
        let flat = [1e-3; 4];
        assert_eq!(poc_finite_verdict(&ns, &flat).0.status, Status::Fail);
        assert_eq!(poc_finite_verdict(&ns, &[0.0; 4]).0.status, Status::Skipped);
        assert_eq!(poc_finite_verdict(&[32], &[0.1]).0.status, Status::Skipped);
    }

    #[test]
    fn plateau_and_bound_logic() {
        let rising: Vec<f64> = (0..=100)
            .map(|k| 1.0 - (-(k as f64) / 10.0).exp())
            .collect();
        assert_eq!(plateau_verdict(&rising).0.status, Status::Pass);
        let linear: Vec<f64> = (0..=100).map(|k| k as f64).collect();
        assert_eq!(plateau_verdict(&linear).0.status, Status::Fail);
        assert_eq!(plateau_verdict(&[0.0; 20]).0.status, Status::Pass);
        assert!(poc_bound_verdict(128, 0.2, 3.01).passed());
        assert!(!poc_bound_verdict(128, 0.3, 3.01).passed());
    }

    #[test]
    fn euler_verdict_logic() {
        let rows: Vec<EulerRow> = [0.04, 0.02, 0.01, 0.005]
            .iter()
            .map(|&e| EulerRow {
                epsilon: e,
                mse_early: 2.0 * e,
                se_early: 0.0,
                mse_late: 2.5 * e,
                se_late: 0.0,
            })
            .collect();
        assert!(euler_verdicts(&rows).iter().all(Verdict::passed));
        let quadratic: Vec<EulerRow> = rows
            .iter()
            .map(|r| EulerRow {
                mse_early: r.epsilon.powi(2),
                mse_late: r.epsilon.powi(2),
                ..r.clone()
            })
            .collect();
        let v = euler_verdicts(&quadratic);
        assert!(!v[0].passed() && !v[1].passed() && v[2].passed());
    }

    #[test]
    fn concentration_verdict_logic() {
        let mut rows = Vec::new();
        for n in [10, 20, 40] {
            for e in [0.1, 0.15, 0.2] {
                let p = (-0.9 * n as f64 * e * e).exp();
                let k = (p * 1000.0).round() as usize;
                let (lower, upper) = crate::metrics::wilson_interval(k, 1000, 1.96);
                rows.push(TailRow {
                    time: 1.0,
                    n,
                    eps: e,
                    tail: TailEstimate {
                        estimate: k as f64 / 1000.0,
                        lower,
                        upper,
                        exceedances: k,
                        replications: 1000,
                    },
                });
            }
        }
        let (v, f) = concentration_verdicts("x", &rows);
        assert!(v.iter().all(Verdict::passed), "{v:?}");
        assert!((f.unwrap().slope - 0.9).abs() < 0.05);
        rows.iter_mut().for_each(|r| {
            r.tail = TailEstimate {
                estimate: 0.0,
                lower: 0.0,
                upper: 0.1,
                exceedances: 0,
                replications: 30,
            }
        });
        assert!(!concentration_verdicts("x", &rows).0[1].passed());
    }

    #[test]
    fn refusals() {
        let mut weak = ScenarioConfig::default_instance();
        weak.potential = PotentialSpec::Quadratic {
            a: Some(0.5),
            matrix: None,
        };
        small(&mut weak);
        let e = exp_poc_uniform(&weak).unwrap_err();
        assert!(matches!(e, Error::Precondition(_)) && e.to_string().contains("margin"));
        assert!(exp_euler_rate(&weak).is_err());

        let mut sc = ScenarioConfig::default_instance();
        sc.sweep.epsilon_values = Some(vec![0.2, 0.1, 0.05]);
        assert!(matches!(exp_euler_rate(&sc), Err(Error::Precondition(_))));
        sc.sweep.replications = Some(20);
        assert!(matches!(
            exp_concentration(&sc),
            Err(Error::Precondition(_))
        ));
        sc.sweep.replications = Some(4);
        assert!(matches!(exp_poc_finite(&sc), Err(Error::Precondition(_))));
    }

    #[test]
    fn decoupled_poc_finite() {
        let mut sc = ScenarioConfig::default_instance();
        small(&mut sc);
        sc.chi = 0.0;
        sc.run.horizon = Some(1.0);
        sc.sweep.n_values = Some(vec![4, 8, 16]);
        sc.sweep.n_ref = Some(32);
        let out = exp_poc_finite(&sc).unwrap();
        assert_eq!(out.verdicts[0].status, Status::Skipped);
        assert!(out.verdicts[0].detail.contains("decoupled"));
        assert!(out.passed());
    }

    #[test]
    fn no_production_uniform_poc_has_zero_deviation() {
        let mut sc = ScenarioConfig::default_instance();
        small(&mut sc);
        sc.beta = 0.0;
        // Keeps the two characteristic roots distinct so the bound constant exists.
        sc.potential = PotentialSpec::Quadratic {
            a: Some(2.0),
            matrix: None,
        };
        sc.run.horizon = Some(2.0);
        sc.sweep.n_values = Some(vec![8]);
        sc.sweep.n_ref = Some(16);
        let out = exp_poc_uniform(&sc).unwrap();
        assert!(out.passed(), "{:?}", out.verdicts);
        let t = out.table("results.csv").unwrap();
        assert!(t.rows.iter().all(|r| r[3] == Cell::Float(0.0)));
    }

    #[test]
    fn field_bounds_cases() {
        let mut sc = ScenarioConfig::default_instance();
        sc.run.epsilon = Some(0.05);
        sc.run.horizon = Some(2.0);
        sc.run.n_particles = Some(32);
        assert!(exp_field_bounds(&sc).unwrap().passed());

        sc.h0 = FieldSpec::GaussianBump {
            amplitude: 1.0,
            variance: 1.0,
        };
        let out = exp_field_bounds(&sc).unwrap();
        assert!(out.passed());
        let first = &out.table("results.csv").unwrap().rows[0];
        // At t = 0 the bound carries |grad h0| = e^{-1/2} on top of beta |grad g| / alpha.
        assert_eq!(first[3], Cell::Float((-0.5f64).exp() + 0.24197072451914337));
        let Cell::Float(g) = first[2] else { panic!() };
        assert!((g - (-0.5f64).exp()).abs() < 1e-3);

        sc.beta = 0.0;
        sc.h0 = FieldSpec::Zero;
        let out = exp_field_bounds(&sc).unwrap();
        assert!(out
            .table("results.csv")
            .unwrap()
            .rows
            .iter()
            .all(|r| r[2] == Cell::Float(0.0)));
    }

    #[test]
    fn constants_outcome() {
        let out = exp_constants(&ScenarioConfig::default_instance()).unwrap();
        let lambda = out.summary["constants"]["lambda_threshold"]
            .as_f64()
            .unwrap();
        assert!((lambda - 0.7978846).abs() < 1e-6);
        assert_eq!(out.summary["assumption"]["satisfied"], true);
    }
}
