//! Explicit Euler scheme for the interacting particle system, coupled runs
//! against a recorded reference field, and noise-shared refinement.
//!
//! One step reads the field at `t_n = n eps`, moves every particle
//!
//! ```text
//! Y_{n+1} = Y_n + dB_n + eps (chi grad h(t_n, Y_n) - grad V(Y_n))
//! ```
//!
//! and then deposits `Y_n` into the memory term, so the source is piecewise
//! constant in time on `[n eps, (n+1) eps)`.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{evaluate_h_direct, FieldGrid, GridDomain, GridSamples, HistoryBuffer};
use crate::metrics::mean_and_se;
use crate::model::Model;
use crate::noise::{child_seed, BrownianSource};

/// Tolerance of the online field and drift bound monitors.
pub const MONITOR_TOLERANCE: f64 = 1e-3;

/// Default cap on a recorded reference field, in bytes.
pub const DEFAULT_RECORDING_CAP: u64 = 2 << 30;

/// Default cap on particle-steps for a refined run.
pub const DEFAULT_REFINEMENT_CAP: u64 = 1 << 34;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldMethod {
    Grid,
    Direct,
}

/// Grid geometry; unset entries are derived from the kernel width and horizon.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSettings {
    pub half_width: Option<f64>,
    pub n_points: Option<usize>,
}

/// Target node spacing for the default grid.
const DEFAULT_SPACING: f64 = 0.04;
/// Room left for particles inside the safety margin of the default grid.
const DEFAULT_PARTICLE_ROOM: f64 = 10.0;

impl GridSettings {
    pub fn resolve(&self, kernel_variance: f64, horizon: f64) -> Result<GridDomain> {
        let half_width = self.half_width.unwrap_or_else(|| {
            (GridDomain::margin(kernel_variance, horizon) + DEFAULT_PARTICLE_ROOM).ceil()
        });
        let n_points = self.n_points.unwrap_or_else(|| {
            ((2.0 * half_width / DEFAULT_SPACING).ceil() as usize).next_power_of_two()
        });
        GridDomain::new(half_width, n_points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EulerConfig {
    pub epsilon: f64,
    pub n_steps: usize,
    pub n_particles: usize,
    pub seed: u64,
    pub field_method: FieldMethod,
    #[serde(default)]
    pub grid: GridSettings,
    #[serde(default)]
    pub replication: u64,
    /// Brownian increments on; off is a deterministic test mode.
    #[serde(default = "default_true")]
    pub noise: bool,
    /// Dyadic level of this run's step in the shared Brownian hierarchy:
    /// the finest increment has length `epsilon / 2^noise_level`.
    #[serde(default)]
    pub noise_level: u32,
    /// Steps at which field snapshots are kept (grid method only).
    #[serde(default)]
    pub snapshot_steps: Vec<usize>,
    #[serde(default)]
    pub record_trajectory: bool,
}

fn default_true() -> bool {
    true
}

impl EulerConfig {
    pub fn new(epsilon: f64, n_steps: usize, n_particles: usize, seed: u64) -> Self {
        Self {
            epsilon,
            n_steps,
            n_particles,
            seed,
            field_method: FieldMethod::Grid,
            grid: GridSettings::default(),
            replication: 0,
            noise: true,
            noise_level: 0,
            snapshot_steps: Vec::new(),
            record_trajectory: false,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.epsilon
    }

    /// Seed of this replication's initial draws and Brownian paths.
    pub fn stream_seed(&self) -> u64 {
        child_seed(self.seed, "replication", self.replication)
    }

    pub fn validate(&self, model: &Model) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::config(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if self.n_steps == 0 || self.n_particles == 0 {
            return Err(Error::config(
                "n_steps and the particle count must be positive",
            ));
        }
        if self.noise_level > 40 {
            return Err(Error::config("noise level is limited to 40"));
        }
        if self.field_method == FieldMethod::Grid && model.dim() != 1 {
            return Err(Error::Unsupported(format!(
                "the grid field method is one-dimensional; use the direct method for dim = {}",
                model.dim()
            )));
        }
        Ok(())
    }

    fn brownian(&self, dim: usize) -> BrownianSource {
        let fine = self.epsilon / (1u64 << self.noise_level) as f64;
        BrownianSource::new(self.stream_seed(), fine, dim)
    }

    fn grid_domain(&self, model: &Model) -> Result<GridDomain> {
        self.grid
            .resolve(model.kernel.delta().unwrap_or(0.0), self.horizon())
    }
}

/// Positions of all particles (flat `N * d`) at step `step`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub positions: Vec<f64>,
    pub dim: usize,
    pub step: usize,
}

impl ParticleEnsemble {
    /// I.i.d. draws from `mu0`, keyed by particle index.
    pub fn sample(model: &Model, n: usize, seed: u64) -> Self {
        let d = model.dim();
        let mut positions = vec![0.0; n * d];
        for (i, p) in positions.chunks_exact_mut(d).enumerate() {
            model.mu0.sample(seed, i, p);
        }
        Self {
            positions,
            dim: d,
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for p in self.positions.chunks_exact(self.dim) {
            m.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Mean of `|Y^i|^2`.
    pub fn second_moment(&self) -> f64 {
        self.positions.iter().map(|x| x * x).sum::<f64>() / self.len() as f64
    }
}

/// Worst observations of the online bound monitors.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MonitorSummary {
    /// Largest `|grad h| - bound(t)` seen, floored at zero.
    pub max_gradient_excess: f64,
    pub max_gradient: f64,
    pub gradient_violations: usize,
    /// First violation as `(step, x, |grad h|, bound)`.
    pub first_violation: Option<(usize, f64, f64, f64)>,
    /// Largest `|drift| - (chi bound(t) + |grad V|)`, floored at zero.
    pub max_drift_excess: f64,
    pub drift_violations: usize,
    /// Largest difference quotient of `grad h` between neighbouring nodes, and its bound.
    pub max_lipschitz_quotient: f64,
    pub lipschitz_bound: f64,
    pub lipschitz_violations: usize,
    pub max_second_moment: f64,
    pub second_moment_level: Option<f64>,
}

impl MonitorSummary {
    pub fn violations(&self) -> usize {
        self.gradient_violations + self.drift_violations + self.lipschitz_violations
    }

    pub fn merge(&mut self, other: &MonitorSummary) {
        self.max_gradient_excess = self.max_gradient_excess.max(other.max_gradient_excess);
        self.max_gradient = self.max_gradient.max(other.max_gradient);
        self.gradient_violations += other.gradient_violations;
        if self.first_violation.is_none() {
            self.first_violation = other.first_violation;
        }
        self.max_drift_excess = self.max_drift_excess.max(other.max_drift_excess);
        self.drift_violations += other.drift_violations;
        self.max_lipschitz_quotient = self
            .max_lipschitz_quotient
            .max(other.max_lipschitz_quotient);
        self.lipschitz_bound = self.lipschitz_bound.max(other.lipschitz_bound);
        self.lipschitz_violations += other.lipschitz_violations;
        self.max_second_moment = self.max_second_moment.max(other.max_second_moment);
        self.second_moment_level = match (self.second_moment_level, other.second_moment_level) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
    }
}

/// Level `(2 / v*) (kappa^2 / (2 v*) + 2)` bounding the mean second moment,
/// with `kappa` the uniform chemotactic drift bound.
pub fn second_moment_level(model: &Model) -> Result<Option<f64>> {
    let v = model.convexity().value;
    if v <= 0.0 {
        return Ok(None);
    }
    let kappa = model.params.chi * model.field_gradient_bound(0.0)?;
    Ok(Some((2.0 / v) * (kappa * kappa / (2.0 * v) + 2.0)))
}

struct Monitors {
    bounds: Vec<f64>,
    lipschitz: Vec<f64>,
    chi: f64,
    summary: MonitorSummary,
}

impl Monitors {
    fn new(model: &Model, cfg: &EulerConfig) -> Result<Self> {
        let bounds = (0..=cfg.n_steps)
            .map(|n| model.field_gradient_bound(n as f64 * cfg.epsilon))
            .collect::<Result<Vec<_>>>()?;
        let lipschitz = (0..=cfg.n_steps)
            .map(|n| model.field_lipschitz_bound(n as f64 * cfg.epsilon))
            .collect::<Result<Vec<_>>>()?;
        let summary = MonitorSummary {
            lipschitz_bound: lipschitz[0],
            second_moment_level: second_moment_level(model)?,
            ..MonitorSummary::default()
        };
        Ok(Self {
            bounds,
            lipschitz,
            chi: model.params.chi,
            summary,
        })
    }

    fn gradient(&mut self, step: usize, x: f64, g: f64) {
        let s = &mut self.summary;
        let excess = g.abs() - self.bounds[step];
        s.max_gradient = s.max_gradient.max(g.abs());
        s.max_gradient_excess = s.max_gradient_excess.max(excess);
        if excess > MONITOR_TOLERANCE {
            s.gradient_violations += 1;
            if s.first_violation.is_none() {
                s.first_violation = Some((step, x, g.abs(), self.bounds[step]));
                log::warn!(
                    "field gradient bound violated at step {step}, x = {x}: {} > {}",
                    g.abs(),
                    self.bounds[step]
                );
            }
        }
    }

    fn grid(&mut self, step: usize, grad: &GridSamples) {
        let d = grad.domain;
        let h = d.spacing();
        let mut prev: Option<f64> = None;
        for (j, &g) in grad.values.iter().enumerate() {
            let x = d.node(j);
            if x.abs() > grad.safe_half_width {
                prev = None;
                continue;
            }
            self.gradient(step, x, g);
            if let Some(p) = prev {
                let q = (g - p).abs() / h;
                let s = &mut self.summary;
                s.max_lipschitz_quotient = s.max_lipschitz_quotient.max(q);
                if q > self.lipschitz[step] + MONITOR_TOLERANCE {
                    s.lipschitz_violations += 1;
                }
            }
            prev = Some(g);
        }
    }

    fn drift(&mut self, step: usize, drift_norm: f64, grad_v_norm: f64) {
        let excess = drift_norm - (self.chi * self.bounds[step] + grad_v_norm);
        let s = &mut self.summary;
        s.max_drift_excess = s.max_drift_excess.max(excess);
        if excess > MONITOR_TOLERANCE {
            s.drift_violations += 1;
        }
    }
}

enum Evaluator {
    Grid(Box<FieldGrid>),
    Direct(HistoryBuffer),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentRow {
    pub step: usize,
    pub t: f64,
    pub mean: Vec<f64>,
    pub m2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    pub step: usize,
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub theta: Vec<f64>,
    pub grad_h: Vec<f64>,
}

/// Output of [`run_particle_system`].
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub epsilon: f64,
    pub dim: usize,
    pub moments: Vec<MomentRow>,
    /// Positions at every step when requested.
    pub trajectory: Option<Vec<Vec<f64>>>,
    pub snapshots: Vec<FieldSnapshot>,
    pub final_positions: Vec<f64>,
    pub monitors: MonitorSummary,
}

/// An interacting particle system advanced by the explicit Euler scheme.
pub struct ParticleSystem<'m> {
    model: &'m Model,
    cfg: EulerConfig,
    ensemble: ParticleEnsemble,
    evaluator: Evaluator,
    noise: BrownianSource,
    monitors: Monitors,
    /// `chi grad h(t_n, .)` on the grid at the current step (grid method).
    drift: Option<GridSamples>,
    scratch: Vec<f64>,
}

impl<'m> ParticleSystem<'m> {
    pub fn new(model: &'m Model, cfg: EulerConfig) -> Result<Self> {
        cfg.validate(model)?;
        let d = model.dim();
        let ensemble = ParticleEnsemble::sample(model, cfg.n_particles, cfg.stream_seed());
        let evaluator = match cfg.field_method {
            FieldMethod::Grid => Evaluator::Grid(Box::new(FieldGrid::new(
                model,
                cfg.grid_domain(model)?,
                cfg.epsilon,
                cfg.horizon(),
            )?)),
            FieldMethod::Direct => {
                if model.kernel.delta().is_none() {
                    return Err(Error::Unsupported(
                        "the direct method needs a Gaussian kernel".into(),
                    ));
                }
                Evaluator::Direct(HistoryBuffer::new(cfg.epsilon, d, cfg.n_particles))
            }
        };
        Ok(Self {
            noise: cfg.brownian(d),
            monitors: Monitors::new(model, &cfg)?,
            model,
            cfg,
            ensemble,
            evaluator,
            drift: None,
            scratch: vec![0.0; 3 * d],
        })
    }

    pub fn ensemble(&self) -> &ParticleEnsemble {
        &self.ensemble
    }

    pub fn config(&self) -> &EulerConfig {
        &self.cfg
    }

    pub fn monitors(&self) -> &MonitorSummary {
        &self.monitors.summary
    }

    pub fn field(&self) -> Option<&FieldGrid> {
        match &self.evaluator {
            Evaluator::Grid(g) => Some(g),
            Evaluator::Direct(_) => None,
        }
    }

    pub fn noise(&self) -> &BrownianSource {
        &self.noise
    }

    /// `chi grad h(t_n, .)` on the grid for the current step.
    pub fn drift_grid(&mut self) -> Result<&GridSamples> {
        let step = self.ensemble.step;
        let Evaluator::Grid(g) = &self.evaluator else {
            return Err(Error::Unsupported(
                "drift grids need the grid field method".into(),
            ));
        };
        if self.drift.is_none() {
            let grad = g.gradient();
            self.monitors.grid(step, &grad);
            let chi = self.model.params.chi;
            let values = grad.values.iter().map(|v| chi * v).collect();
            self.drift = Some(GridSamples { values, ..grad });
        }
        Ok(self.drift.as_ref().unwrap())
    }

    /// One Euler step: move every particle, then deposit `Y_n` into the memory term.
    pub fn step(&mut self) -> Result<()> {
        let n = self.ensemble.step;
        if n >= self.cfg.n_steps {
            return Err(Error::Precondition(format!("run already reached step {n}")));
        }
        let d = self.ensemble.dim;
        let eps = self.cfg.epsilon;
        let old = self.ensemble.positions.clone();
        if let Evaluator::Grid(_) = self.evaluator {
            self.drift_grid()?;
        }
        let chi = self.model.params.chi;
        let (chem, rest) = self.scratch.split_at_mut(d);
        let (gv, db) = rest.split_at_mut(d);
        for (i, x) in self.ensemble.positions.chunks_exact_mut(d).enumerate() {
            match &self.evaluator {
                Evaluator::Grid(g) => {
                    let drift = self.drift.as_ref().unwrap();
                    chem[0] = drift.interpolate(x[0]).ok_or(Error::Escape {
                        particle: i,
                        step: n,
                        position: x[0],
                        limit: g.safe_half_width(),
                    })?;
                }
                Evaluator::Direct(h) => {
                    let m = self.model;
                    let (_, grad) = evaluate_h_direct(h, &m.h0, &m.params, &m.kernel, x)?;
                    for c in 0..d {
                        self.monitors.gradient(n, x[0], grad[c]);
                        chem[c] = chi * grad[c];
                    }
                }
            }
            self.model.potential.gradient(x, gv);
            if self.cfg.noise {
                self.noise.increment(i, self.cfg.noise_level, n as u64, db);
            } else {
                db.fill(0.0);
            }
            let (mut drift_sq, mut gv_sq) = (0.0, 0.0);
            for c in 0..d {
                let drift = chem[c] - gv[c];
                drift_sq += drift * drift;
                gv_sq += gv[c] * gv[c];
                x[c] = x[c] + db[c] + eps * drift;
            }
            self.monitors.drift(n, drift_sq.sqrt(), gv_sq.sqrt());
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    particle: i,
                    step: n + 1,
                });
            }
        }
        match &mut self.evaluator {
            Evaluator::Grid(g) => g.advance(&old)?,
            Evaluator::Direct(h) => h.push(&old, self.model.params.alpha)?,
        }
        self.drift = None;
        self.ensemble.step = n + 1;
        let m2 = self.ensemble.second_moment();
        let s = &mut self.monitors.summary;
        s.max_second_moment = s.max_second_moment.max(m2);
        Ok(())
    }

    fn snapshot(&self) -> Option<FieldSnapshot> {
        let g = self.field()?;
        Some(FieldSnapshot {
            step: g.step(),
            x: g.domain().nodes(),
            h: g.h_values(),
            theta: g.theta_values(),
            grad_h: g.gradient().values,
        })
    }

    fn moment_row(&self) -> MomentRow {
        MomentRow {
            step: self.ensemble.step,
            t: self.ensemble.step as f64 * self.cfg.epsilon,
            mean: self.ensemble.mean(),
            m2: self.ensemble.second_moment(),
        }
    }
}

/// Advance `ensemble` one Euler step in `system`. Thin wrapper over [`ParticleSystem::step`].
pub fn euler_step<'a>(system: &'a mut ParticleSystem<'_>) -> Result<&'a ParticleEnsemble> {
    system.step()?;
    Ok(system.ensemble())
}

/// Run a full simulation, recording per-step moments and requested snapshots.
pub fn run_particle_system(cfg: &EulerConfig, model: &Model) -> Result<RunRecord> {
    let mut sys = ParticleSystem::new(model, cfg.clone())?;
    let mut moments = Vec::with_capacity(cfg.n_steps + 1);
    let mut trajectory = cfg.record_trajectory.then(Vec::new);
    let mut snapshots = Vec::new();
    loop {
        let n = sys.ensemble.step;
        moments.push(sys.moment_row());
        if let Some(t) = trajectory.as_mut() {
            t.push(sys.ensemble.positions.clone());
        }
        if cfg.snapshot_steps.contains(&n) {
            if let Some(s) = sys.snapshot() {
                snapshots.push(s);
            }
        }
        if n == cfg.n_steps {
            break;
        }
        if let Evaluator::Grid(_) = sys.evaluator {
            sys.drift_grid()?;
        }
        sys.step()?;
    }
    Ok(RunRecord {
        epsilon: cfg.epsilon,
        dim: model.dim(),
        moments,
        trajectory,
        snapshots,
        final_positions: sys.ensemble.positions,
        monitors: sys.monitors.summary,
    })
}

const REFERENCE_MAGIC: &[u8; 8] = b"KSMREF\0\0";
const REFERENCE_VERSION: u32 = 1;

/// Drift grids `chi grad h(n eps, .)`, `n = 0..n_steps`, recorded from a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceField {
    pub domain: GridDomain,
    pub safe_half_width: f64,
    pub epsilon: f64,
    pub n_steps: usize,
    /// Row-major `n_steps * n_points`.
    pub grids: Vec<f64>,
}

impl ReferenceField {
    pub fn bytes_for(n_steps: usize, n_points: usize) -> u64 {
        n_steps as u64 * n_points as u64 * 8
    }

    pub fn grid(&self, step: usize) -> &[f64] {
        let n = self.domain.n_points;
        &self.grids[step * n..(step + 1) * n]
    }

    pub fn samples(&self, step: usize) -> GridSamples {
        GridSamples {
            domain: self.domain,
            safe_half_width: self.safe_half_width,
            values: self.grid(step).to_vec(),
        }
    }

    pub fn sup_norm(&self, step: usize) -> f64 {
        self.grid(step).iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(REFERENCE_MAGIC)?;
        w.write_all(&REFERENCE_VERSION.to_le_bytes())?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.n_steps as u64).to_le_bytes())?;
        w.write_all(&(self.domain.n_points as u64).to_le_bytes())?;
        for v in [self.domain.half_width, self.safe_half_width, self.epsilon] {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.grids.len() * 8);
        for v in &self.grids {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != REFERENCE_MAGIC {
            return Err(Error::config("not a reference field recording"));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != REFERENCE_VERSION {
            return Err(Error::config("unsupported reference recording version"));
        }
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != 1 {
            return Err(Error::config("reference recordings are one-dimensional"));
        }
        let mut next_u64 = |r: &mut dyn Read| -> Result<u64> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let n_steps = next_u64(r)? as usize;
        let n_points = next_u64(r)? as usize;
        let half_width = f64::from_bits(next_u64(r)?);
        let safe_half_width = f64::from_bits(next_u64(r)?);
        let epsilon = f64::from_bits(next_u64(r)?);
        let domain = GridDomain::new(half_width, n_points)?;
        let mut raw = vec![0u8; n_steps * n_points * 8];
        r.read_exact(&mut raw)?;
        let grids = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            domain,
            safe_half_width,
            epsilon,
            n_steps,
            grids,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Run an `N_ref`-particle system (`cfg.n_particles`) and record the drift
/// grid of every step, as a proxy for the mean-field drift.
pub fn simulate_nonlinear_reference(
    cfg: &EulerConfig,
    model: &Model,
    cap_bytes: u64,
) -> Result<ReferenceField> {
    Ok(record_reference(cfg, model, cap_bytes)?.0)
}

/// [`simulate_nonlinear_reference`] plus the monitor summary of the reference run.
pub fn record_reference(
    cfg: &EulerConfig,
    model: &Model,
    cap_bytes: u64,
) -> Result<(ReferenceField, MonitorSummary)> {
    if cfg.field_method != FieldMethod::Grid {
        return Err(Error::Unsupported(
            "reference recordings need the grid field method".into(),
        ));
    }
    let domain = cfg.grid_domain(model)?;
    let need = ReferenceField::bytes_for(cfg.n_steps, domain.n_points);
    if need > cap_bytes {
        return Err(Error::CapExceeded {
            what: "reference recording (bytes)".into(),
            required: need,
            cap: cap_bytes,
        });
    }
    let mut sys = ParticleSystem::new(model, cfg.clone())?;
    let mut grids = Vec::with_capacity(cfg.n_steps * domain.n_points);
    for _ in 0..cfg.n_steps {
        grids.extend_from_slice(&sys.drift_grid()?.values);
        sys.step()?;
    }
    let safe_half_width = sys.field().unwrap().safe_half_width();
    let field = ReferenceField {
        domain,
        safe_half_width,
        epsilon: cfg.epsilon,
        n_steps: cfg.n_steps,
        grids,
    };
    Ok((field, sys.monitors.summary))
}

/// How the reference run's streams relate to the interacting system's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSeed {
    /// Streams derived independently from the master seed.
    Independent,
    /// The reference run reuses the interacting system's streams.
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledRunConfig {
    /// Interacting system; `system.n_particles` is `N`.
    pub system: EulerConfig,
    pub n_ref: usize,
    pub reference_seed: ReferenceSeed,
    #[serde(default = "default_recording_cap")]
    pub recording_cap: u64,
}

fn default_recording_cap() -> u64 {
    DEFAULT_RECORDING_CAP
}

impl CoupledRunConfig {
    pub fn reference_config(&self) -> EulerConfig {
        let mut r = self.system.clone();
        r.n_particles = self.n_ref;
        r.snapshot_steps.clear();
        r.record_trajectory = false;
        if self.reference_seed == ReferenceSeed::Independent {
            r.seed = child_seed(self.system.seed, "reference", 0);
        }
        r
    }
}

/// Deviation `mean_i |X^{i,N}_n - Xbar^i_n|^2` at every step `n = 0..=n_steps`
/// for one replication, with `Xbar` driven by `reference`. Also returns the
/// monitor summary of the interacting system.
pub fn coupled_deviation(
    cfg: &EulerConfig,
    model: &Model,
    reference: &ReferenceField,
) -> Result<(Vec<f64>, MonitorSummary)> {
    if (reference.epsilon - cfg.epsilon).abs() > 1e-15 * cfg.epsilon {
        return Err(Error::config(
            "reference recording uses a different step size",
        ));
    }
    if reference.n_steps < cfg.n_steps {
        return Err(Error::config(format!(
            "reference covers {} steps but the run needs {}",
            reference.n_steps, cfg.n_steps
        )));
    }
    if model.dim() != 1 {
        return Err(Error::Unsupported(
            "coupled runs are one-dimensional".into(),
        ));
    }
    let mut sys = ParticleSystem::new(model, cfg.clone())?;
    let mut bar = sys.ensemble.positions.clone();
    let noise = *sys.noise();
    let eps = cfg.epsilon;
    let deviation = |a: &[f64], b: &[f64]| {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
    };
    let mut out = Vec::with_capacity(cfg.n_steps + 1);
    let (mut gv, mut db) = ([0.0], [0.0]);
    for n in 0..cfg.n_steps {
        out.push(deviation(&sys.ensemble.positions, &bar));
        let drift = reference.samples(n);
        for (i, x) in bar.iter_mut().enumerate() {
            let chem = drift.interpolate(*x).ok_or(Error::Escape {
                particle: i,
                step: n,
                position: *x,
                limit: reference.safe_half_width,
            })?;
            model.potential.gradient(std::slice::from_ref(x), &mut gv);
            if cfg.noise {
                noise.increment(i, cfg.noise_level, n as u64, &mut db);
            } else {
                db[0] = 0.0;
            }
            *x = *x + db[0] + eps * (chem - gv[0]);
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    particle: i,
                    step: n + 1,
                });
            }
        }
        sys.step()?;
    }
    out.push(deviation(&sys.ensemble.positions, &bar));
    Ok((out, sys.monitors.summary))
}

/// Per-step mean deviation across replications with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationSeries {
    pub n: usize,
    pub epsilon: f64,
    pub replications: usize,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    /// Merged monitors of every interacting and reference run.
    pub monitors: MonitorSummary,
}

impl DeviationSeries {
    pub fn from_replications(
        n: usize,
        epsilon: f64,
        runs: &[Vec<f64>],
        monitors: MonitorSummary,
    ) -> Self {
        let steps = runs[0].len();
        let (mut mean, mut std_error) = (Vec::with_capacity(steps), Vec::with_capacity(steps));
        let mut col = vec![0.0; runs.len()];
        for k in 0..steps {
            for (c, r) in col.iter_mut().zip(runs) {
                *c = r[k];
            }
            let (m, se) = mean_and_se(&col);
            mean.push(m);
            std_error.push(se);
        }
        Self {
            n,
            epsilon,
            replications: runs.len(),
            mean,
            std_error,
            monitors,
        }
    }

    /// Largest mean deviation over steps `lo..=hi`, with its standard error.
    pub fn sup_over(&self, lo: usize, hi: usize) -> (f64, f64) {
        (lo..=hi.min(self.mean.len() - 1))
            .map(|k| (self.mean[k], self.std_error[k]))
            .fold(
                (f64::NEG_INFINITY, 0.0),
                |a, b| if b.0 > a.0 { b } else { a },
            )
    }
}

/// Coupled runs for each `N` in `ns` over `replications`. Replication `r`
/// records one reference field (from its own streams) and couples every `N`
/// to it, so the sweep reuses each reference.
pub fn run_coupled_poc_sweep(
    cc: &CoupledRunConfig,
    ns: &[usize],
    replications: usize,
    model: &Model,
) -> Result<Vec<DeviationSeries>> {
    if replications == 0 || ns.is_empty() {
        return Err(Error::config(
            "need at least one replication and one system size",
        ));
    }
    type Rep = (Vec<(Vec<f64>, MonitorSummary)>, MonitorSummary);
    let per_rep: Vec<Rep> = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let mut rc = cc.reference_config();
            rc.replication = r;
            if cc.reference_seed == ReferenceSeed::Independent {
                rc.seed = child_seed(cc.system.seed, "reference", r);
                rc.replication = 0;
            }
            let (reference, ref_monitors) = record_reference(&rc, model, cc.recording_cap)?;
            let runs = ns
                .iter()
                .map(|&n| {
                    let mut sc = cc.system.clone();
                    sc.n_particles = n;
                    sc.replication = r;
                    coupled_deviation(&sc, model, &reference)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((runs, ref_monitors))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ns
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let mut monitors = MonitorSummary::default();
            let runs: Vec<Vec<f64>> = per_rep
                .iter()
                .map(|(r, m)| {
                    monitors.merge(m);
                    monitors.merge(&r[k].1);
                    r[k].0.clone()
                })
                .collect();
            DeviationSeries::from_replications(n, cc.system.epsilon, &runs, monitors)
        })
        .collect())
}

pub fn run_coupled_poc(
    cc: &CoupledRunConfig,
    replications: usize,
    model: &Model,
) -> Result<DeviationSeries> {
    let mut v = run_coupled_poc_sweep(cc, &[cc.system.n_particles], replications, model)?;
    Ok(v.pop().unwrap())
}

/// Configuration of the run at `epsilon / 2^k` sharing `cfg`'s Brownian path.
pub fn refined_config(cfg: &EulerConfig, k: u32) -> Result<EulerConfig> {
    if k > cfg.noise_level {
        return Err(Error::config(format!(
            "refinement by {k} levels needs noise_level >= {k}, got {}",
            cfg.noise_level
        )));
    }
    let mut f = cfg.clone();
    f.epsilon = cfg.epsilon / (1u64 << k) as f64;
    f.n_steps = cfg.n_steps << k;
    f.noise_level = cfg.noise_level - k;
    f.snapshot_steps.clear();
    f.record_trajectory = false;
    Ok(f)
}

/// Positions every `stride` steps (`0, stride, ..., n_steps`) with the run's monitors.
pub fn sampled_states(
    cfg: &EulerConfig,
    stride: usize,
    model: &Model,
) -> Result<(Vec<Vec<f64>>, MonitorSummary)> {
    if stride == 0 || !cfg.n_steps.is_multiple_of(stride) {
        return Err(Error::config("sampling stride must divide the step count"));
    }
    let mut sys = ParticleSystem::new(model, cfg.clone())?;
    let mut out = Vec::with_capacity(cfg.n_steps / stride + 1);
    out.push(sys.ensemble.positions.clone());
    for _ in 0..cfg.n_steps / stride {
        for _ in 0..stride {
            sys.step()?;
        }
        out.push(sys.ensemble.positions.clone());
    }
    Ok((out, sys.monitors.summary))
}

/// States of the run at `epsilon / 2^k` on the coarse step times
/// `n * epsilon`, `n = 0..=n_steps`, driven by the same Brownian path.
pub fn refine_reference(
    cfg: &EulerConfig,
    k: u32,
    model: &Model,
    cap_particle_steps: u64,
) -> Result<Vec<Vec<f64>>> {
    Ok(refine_with_monitors(cfg, k, model, cap_particle_steps)?.0)
}

pub fn refine_with_monitors(
    cfg: &EulerConfig,
    k: u32,
    model: &Model,
    cap_particle_steps: u64,
) -> Result<(Vec<Vec<f64>>, MonitorSummary)> {
    let fine = refined_config(cfg, k)?;
    let work = fine.n_steps as u64 * fine.n_particles as u64;
    if work > cap_particle_steps {
        return Err(Error::CapExceeded {
            what: "refined run (particle-steps)".into(),
            required: work,
            cap: cap_particle_steps,
        });
    }
    sampled_states(&fine, 1 << k, model)
}

/// Positions of the base run at every coarse step.
pub fn coarse_states(cfg: &EulerConfig, model: &Model) -> Result<Vec<Vec<f64>>> {
    Ok(sampled_states(cfg, 1, model)?.0)
}

/// Mean of the second-moment series over its last quarter divided by the
/// mean over its second quarter; values near 1 mean no drift-off.
pub fn stability_ratio(m2: &[f64]) -> Result<f64> {
    let n = m2.len();
    if n < 8 {
        return Err(Error::Precondition(
            "stability ratio needs at least 8 points".into(),
        ));
    }
    let mean = |a: usize, b: usize| m2[a..b].iter().sum::<f64>() / (b - a) as f64;
    Ok(mean(3 * n / 4, n) / mean(n / 4, n / 2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        InitialDistribution, InitialField, KernelDescriptor, ModelParams, PotentialDescriptor,
    };

    fn model(alpha: f64, beta: f64, chi: f64, h0: InitialField, mu0: InitialDistribution) -> Model {
        Model::new(
            ModelParams::new(alpha, beta, chi, 1).unwrap(),
            KernelDescriptor::Gaussian { delta: 1.0 },
            PotentialDescriptor::isotropic(1.0, 1).unwrap(),
            h0,
            mu0,
        )
        .unwrap()
    }

    fn default_model() -> Model {
        Model::default_instance()
    }

    #[test]
    fn config_validation() {
        let m = default_model();
        let mut c = EulerConfig::new(1.5, 10, 4, 1);
        assert!(matches!(
            ParticleSystem::new(&m, c.clone()),
            Err(Error::Config(_))
        ));
        c.epsilon = 0.01;
        c.n_particles = 0;
        assert!(ParticleSystem::new(&m, c).is_err());
    }

    #[test]
    fn zero_noise_linear_recursion() {
        let m = model(
            1.0,
            0.0,
            1.0,
            InitialField::Zero,
            InitialDistribution::PointMass { at: 1.0 },
        );
        let mut c = EulerConfig::new(0.01, 300, 1, 5);
        c.noise = false;
        let rec = run_particle_system(&c, &m).unwrap();
        for row in &rec.moments {
            let want = 0.99f64.powi(row.step as i32);
            assert!((row.mean[0] - want).abs() <= 1e-12 * want);
        }
    }

    #[test]
    fn no_chemotaxis_is_bitwise_ou() {
        let m = model(
            1.0,
            1.0,
            0.0,
            InitialField::Zero,
            InitialDistribution::Gaussian {
                mean: 0.0,
                variance: 0.5,
            },
        );
        let c = EulerConfig::new(0.01, 200, 3, 42);
        let rec = run_particle_system(&c, &m).unwrap();
        let ens = ParticleEnsemble::sample(&m, 3, c.stream_seed());
        let src = c.brownian(1);
        let mut y = ens.positions;
        let mut db = [0.0];
        for n in 0..200u64 {
            for (i, x) in y.iter_mut().enumerate() {
                src.increment(i, 0, n, &mut db);
                *x = *x + db[0] + 0.01 * (0.0 - *x);
            }
        }
        assert_eq!(rec.final_positions, y);
    }

    #[test]
    fn ou_variance_matches_scalar_recursion() {
        let m = model(
            1.0,
            1.0,
            0.0,
            InitialField::Zero,
            InitialDistribution::PointMass { at: 0.0 },
        );
        let eps = 0.05;
        let mut c = EulerConfig::new(eps, 200, 20_000, 8);
        c.grid = GridSettings {
            half_width: Some(40.0),
            n_points: Some(256),
        };
        let rec = run_particle_system(&c, &m).unwrap();
        let mut var = 0.0;
        for row in &rec.moments[1..] {
            var = (1.0 - eps) * (1.0 - eps) * var + eps;
            // Standard error of a sample second moment of a centred Gaussian.
            let se = var * (2.0 / 20_000f64).sqrt();
            assert!(
                (row.m2 - var).abs() <= 5.0 * se,
                "step {}: {} vs {}",
                row.step,
                row.m2,
                var
            );
        }
    }

    #[test]
    fn grid_and_direct_paths_agree() {
        let m = default_model();
        let mut c = EulerConfig::new(0.01, 100, 4, 3);
        c.grid = GridSettings {
            half_width: Some(12.0),
            n_points: Some(2048),
        };
        let grid = run_particle_system(&c, &m).unwrap();
        c.field_method = FieldMethod::Direct;
        let direct = run_particle_system(&c, &m).unwrap();
        let dev = grid
            .final_positions
            .iter()
            .zip(&direct.final_positions)
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        assert!(dev <= 1e-3, "{dev}");
        assert!(dev > 0.0);
    }

    #[test]
    fn direct_method_runs_in_two_dimensions() {
        let m = Model::new(
            ModelParams::new(1.0, 1.0, 1.0, 2).unwrap(),
            KernelDescriptor::Gaussian { delta: 1.0 },
            PotentialDescriptor::isotropic(1.0, 2).unwrap(),
            InitialField::Zero,
            InitialDistribution::Gaussian {
                mean: 0.0,
                variance: 0.5,
            },
        )
        .unwrap();
        let mut c = EulerConfig::new(0.02, 40, 5, 1);
        assert!(matches!(
            run_particle_system(&c, &m),
            Err(Error::Unsupported(_))
        ));
        c.field_method = FieldMethod::Direct;
        let rec = run_particle_system(&c, &m).unwrap();
        assert_eq!(rec.final_positions.len(), 10);
        assert_eq!(rec.monitors.gradient_violations, 0);
    }

    #[test]
    fn runs_are_deterministic() {
        let m = default_model();
        let mut c = EulerConfig::new(0.02, 50, 16, 77);
        c.record_trajectory = true;
        let a = run_particle_system(&c, &m).unwrap();
        let b = run_particle_system(&c, &m).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        c.replication = 1;
        let other = run_particle_system(&c, &m).unwrap();
        assert_ne!(a.final_positions, other.final_positions);
    }

    #[test]
    fn prefix_particles_share_initial_draws_and_noise() {
        let m = model(
            1.0,
            1.0,
            0.0,
            InitialField::Zero,
            InitialDistribution::Gaussian {
                mean: 0.0,
                variance: 0.5,
            },
        );
        let small = run_particle_system(&EulerConfig::new(0.02, 30, 4, 9), &m).unwrap();
        let large = run_particle_system(&EulerConfig::new(0.02, 30, 10, 9), &m).unwrap();
        // chi = 0 decouples particles, so shared streams give identical paths.
        assert_eq!(small.final_positions[..], large.final_positions[..4]);
    }

    #[test]
    fn monitors_hold_on_default_instance() {
        let m = default_model();
        let c = EulerConfig::new(0.02, 200, 64, 4);
        let rec = run_particle_system(&c, &m).unwrap();
        assert_eq!(rec.monitors.violations(), 0, "{:?}", rec.monitors);
        assert!(rec.monitors.max_gradient <= 0.2419707 + 1e-3);
        let level = rec.monitors.second_moment_level.unwrap();
        assert!(rec.monitors.max_second_moment <= level);
    }

    #[test]
    fn escape_is_reported_with_particle_and_step() {
        let m = model(
            1.0,
            1.0,
            1.0,
            InitialField::Zero,
            InitialDistribution::PointMass { at: 15.0 },
        );
        let mut c = EulerConfig::new(0.01, 10, 2, 1);
        c.grid = GridSettings {
            half_width: Some(20.0),
            n_points: Some(1024),
        };
        match run_particle_system(&c, &m) {
            Err(Error::Escape {
                particle: 0,
                step: 0,
                ..
            }) => {}
            other => panic!(
                "expected escape, got {:?}",
                other.map(|r| r.final_positions)
            ),
        }
    }

    #[test]
    fn reference_with_no_production_is_the_decaying_initial_field() {
        let bump = InitialField::gaussian_bump(1.0, 0.5).unwrap();
        let m = model(
            0.7,
            0.0,
            1.3,
            bump.clone(),
            InitialDistribution::Gaussian {
                mean: 0.0,
                variance: 0.5,
            },
        );
        let c = EulerConfig::new(0.05, 40, 32, 2);
        let r = simulate_nonlinear_reference(&c, &m, DEFAULT_RECORDING_CAP).unwrap();
        let mut worst: f64 = 0.0;
        for n in [0, 7, 39] {
            let t = n as f64 * 0.05;
            for (j, x) in r.domain.nodes().into_iter().enumerate() {
                let mut g = [0.0];
                bump.semigroup_closed_form(0.7, t, &[x], &mut g).unwrap();
                worst = worst.max((r.grid(n)[j] - 1.3 * g[0]).abs());
            }
        }
        assert!(worst <= 1e-6, "{worst}");
    }

    #[test]
    fn reference_cap_refuses() {
        let m = default_model();
        let c = EulerConfig::new(0.01, 500, 8, 1);
        match simulate_nonlinear_reference(&c, &m, 1000) {
            Err(Error::CapExceeded {
                required,
                cap: 1000,
                ..
            }) => assert!(required > 1000),
            other => panic!("{:?}", other.map(|r| r.n_steps)),
        }
    }

    #[test]
    fn reference_roundtrips_through_binary_format() {
        let m = default_model();
        let c = EulerConfig::new(0.05, 6, 8, 1);
        let r = simulate_nonlinear_reference(&c, &m, DEFAULT_RECORDING_CAP).unwrap();
        let mut buf = Vec::new();
        r.write_to(&mut buf).unwrap();
        assert_eq!(
            buf.len() as u64,
            56 + ReferenceField::bytes_for(6, r.domain.n_points)
        );
        assert_eq!(ReferenceField::read_from(&mut buf.as_slice()).unwrap(), r);
        assert!(ReferenceField::read_from(&mut &b"garbage!"[..]).is_err());
    }

    #[test]
    fn self_coupling_and_decoupled_give_zero_deviation() {
        let m = default_model();
        let sys = EulerConfig::new(0.02, 50, 16, 3);
        let cc = CoupledRunConfig {
            system: sys.clone(),
            n_ref: 16,
            reference_seed: ReferenceSeed::Shared,
            recording_cap: DEFAULT_RECORDING_CAP,
        };
        let s = run_coupled_poc(&cc, 2, &m).unwrap();
        assert!(s.mean.iter().all(|&v| v == 0.0));

        let free = model(
            1.0,
            1.0,
            0.0,
            InitialField::Zero,
            InitialDistribution::Gaussian {
                mean: 0.0,
                variance: 0.5,
            },
        );
        let cc = CoupledRunConfig {
            n_ref: 64,
            reference_seed: ReferenceSeed::Independent,
            ..cc
        };
        let s = run_coupled_poc(&cc, 2, &free).unwrap();
        assert!(s.mean.iter().all(|&v| v == 0.0));

        let no_prod = model(
            1.0,
            0.0,
            1.0,
            InitialField::gaussian_bump(1.0, 1.0).unwrap(),
            InitialDistribution::Gaussian {
                mean: 0.0,
                variance: 0.5,
            },
        );
        let s = run_coupled_poc(&cc, 2, &no_prod).unwrap();
        assert!(s.mean.iter().all(|&v| v == 0.0));

        let s = run_coupled_poc(&cc, 2, &m).unwrap();
        assert_eq!(s.mean[0], 0.0);
        assert!(s.mean.last().unwrap() > &0.0);
    }

    #[test]
    fn short_reference_is_a_configuration_error() {
        let m = default_model();
        let c = EulerConfig::new(0.02, 10, 8, 1);
        let r = simulate_nonlinear_reference(&c, &m, DEFAULT_RECORDING_CAP).unwrap();
        let long = EulerConfig::new(0.02, 20, 8, 1);
        assert!(matches!(
            coupled_deviation(&long, &m, &r),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn larger_reference_ensembles_fluctuate_less() {
        // Sup-norm fluctuation of the recorded drift around the large-ensemble
        // average should shrink as N_ref grows.
        let m = default_model();
        let spread = |n_ref: usize| {
            let runs: Vec<Vec<f64>> = (0..8)
                .map(|s| {
                    let c = EulerConfig::new(0.05, 20, n_ref, 100 + s);
                    let r = simulate_nonlinear_reference(&c, &m, DEFAULT_RECORDING_CAP).unwrap();
                    r.grid(19).to_vec()
                })
                .collect();
            let k = runs[0].len();
            let mean: Vec<f64> = (0..k)
                .map(|j| runs.iter().map(|r| r[j]).sum::<f64>() / 8.0)
                .collect();
            runs.iter()
                .map(|r| {
                    r.iter()
                        .zip(&mean)
                        .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()))
                })
                .sum::<f64>()
                / 8.0
        };
        let (a, b, c) = (spread(64), spread(128), spread(256));
        assert!(a > b && b > c, "{a} {b} {c}");
    }

    #[test]
    fn refinement_zero_is_identity_and_drift_only_gap_is_first_order() {
        let m = default_model();
        let mut c = EulerConfig::new(0.04, 25, 8, 6);
        c.noise_level = 3;
        let base = coarse_states(&c, &m).unwrap();
        assert_eq!(
            refine_reference(&c, 0, &m, DEFAULT_REFINEMENT_CAP).unwrap(),
            base
        );
        assert!(refine_reference(&c, 4, &m, DEFAULT_REFINEMENT_CAP).is_err());
        assert!(matches!(
            refine_reference(&c, 3, &m, 10),
            Err(Error::CapExceeded { .. })
        ));
        assert_eq!(stability_ratio(&[1.0; 8]).unwrap(), 1.0);
        assert!(stability_ratio(&[1.0; 4]).is_err());

        // Without noise the scheme is a first-order ODE integrator.
        let ode = model(
            1.0,
            1.0,
            1.0,
            InitialField::Zero,
            InitialDistribution::Uniform {
                low: -1.0,
                high: 1.0,
            },
        );
        let gap = |eps: f64| {
            let mut c = EulerConfig::new(eps, (1.0 / eps).round() as usize, 8, 6);
            c.noise = false;
            c.noise_level = 4;
            let coarse = coarse_states(&c, &ode).unwrap();
            let fine = refine_reference(&c, 4, &ode, DEFAULT_REFINEMENT_CAP).unwrap();
            let (a, b) = (coarse.last().unwrap(), fine.last().unwrap());
            a.iter()
                .zip(b)
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        };
        let ratio = gap(0.04) / gap(0.02);
        assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
    }
}
