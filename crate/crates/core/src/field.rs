//! The chemical field `h(t, x) = Q_t h0(x) + beta * Theta_t(x)`.
//!
//! Two evaluators are provided:
//!
//! * [`FieldGrid`], a one-dimensional periodic grid on `[-L, L)` whose memory
//!   term is advanced by the exact semigroup recursion
//!   `Theta_{n+1} = Q_eps Theta_n + eps * Q_{eps/2} (g * mu_n)`. The heat
//!   semigroup acts diagonally on Fourier coefficients, so the grid keeps
//!   `Theta` in coefficient form and synthesises node values on demand.
//! * [`evaluate_h_direct`], a literal sum over the stored position history,
//!   valid in any dimension for Gaussian kernels. It is quadratic in the
//!   history length and exists to validate the grid.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::model::{gaussian_density, InitialField, KernelDescriptor, Model, ModelParams};

/// Below `exp(-40)` a Gaussian Fourier multiplier is dropped.
const SPECTRAL_CUTOFF_EXPONENT: f64 = 40.0;

/// Periodic grid `x_j = -L + j * 2L / n`, `j = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridDomain {
    pub half_width: f64,
    pub n_points: usize,
}

impl GridDomain {
    pub fn new(half_width: f64, n_points: usize) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::config(format!(
                "grid half-width must be positive, got {half_width}"
            )));
        }
        if n_points < 16 || !n_points.is_power_of_two() {
            return Err(Error::config(format!(
                "grid size must be a power of two >= 16, got {n_points}"
            )));
        }
        Ok(Self {
            half_width,
            n_points,
        })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n_points as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|j| self.node(j)).collect()
    }

    /// Safety margin `6 sqrt(delta + T)` for kernel variance `delta` and horizon `T`.
    pub fn margin(kernel_variance: f64, horizon: f64) -> f64 {
        6.0 * (kernel_variance + horizon).sqrt()
    }
}

/// FFT plans and wavenumbers for one grid.
pub(crate) struct Spectral {
    domain: GridDomain,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Wavenumber `k_m = pi m' / L` per FFT index, `m' in [-n/2, n/2)`.
    k: Vec<f64>,
    /// `(-1)^{m'}`: phase of `e^{i k x_0}` at `x_0 = -L`.
    parity: Vec<f64>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral")
            .field("domain", &self.domain)
            .finish()
    }
}

impl Spectral {
    pub(crate) fn new(domain: GridDomain) -> Self {
        let n = domain.n_points;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let signed = |m: usize| {
            if m < n / 2 {
                m as i64
            } else {
                m as i64 - n as i64
            }
        };
        let k = (0..n)
            .map(|m| PI * signed(m) as f64 / domain.half_width)
            .collect();
        let parity = (0..n)
            .map(|m| if signed(m) % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        Self {
            domain,
            fwd,
            inv,
            k,
            parity,
        }
    }

    fn n(&self) -> usize {
        self.domain.n_points
    }

    /// Coefficients `a_m` of `f(x) = sum_m a_m e^{i k_m x}` from node values.
    pub(crate) fn coeffs(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        let scale = 1.0 / self.n() as f64;
        for (b, p) in buf.iter_mut().zip(&self.parity) {
            *b *= p * scale;
        }
        buf
    }

    /// Node values from coefficients.
    pub(crate) fn values(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let mut buf: Vec<Complex64> = coeffs
            .iter()
            .zip(&self.parity)
            .map(|(c, p)| c * p)
            .collect();
        self.inv.process(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Multiply by the symbol of `Q_t`: `e^{-(alpha + k^2/2) t}`.
    pub(crate) fn heat(&self, coeffs: &mut [Complex64], t: f64, alpha: f64) {
        for (c, k) in coeffs.iter_mut().zip(&self.k) {
            *c *= (-(alpha + 0.5 * k * k) * t).exp();
        }
    }

    /// Coefficients of the spatial derivative; the Nyquist mode is dropped.
    pub(crate) fn derivative(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        let nyq = self.n() / 2;
        coeffs
            .iter()
            .zip(&self.k)
            .enumerate()
            .map(|(m, (c, k))| {
                if m == nyq {
                    Complex64::new(0.0, 0.0)
                } else {
                    c * Complex64::new(0.0, *k)
                }
            })
            .collect()
    }

    /// Coefficients of `(1/N) sum_i g(. - X_i)` for a Gaussian kernel of
    /// variance `delta`, by direct summation over the retained modes:
    /// `a_m = e^{-delta k^2 / 2} / (2L) * (1/N) sum_i e^{-i k_m X_i}`.
    pub(crate) fn gaussian_source(&self, positions: &[f64], delta: f64) -> Vec<Complex64> {
        let n = self.n();
        let dk = PI / self.domain.half_width;
        let k_max = (2.0 * SPECTRAL_CUTOFF_EXPONENT / delta).sqrt();
        let m_cut = ((k_max / dk).floor() as usize).min(n / 2 - 1);
        let mut acc = vec![Complex64::new(0.0, 0.0); m_cut + 1];
        for &x in positions {
            let (s, c) = (dk * x).sin_cos();
            let w = Complex64::new(c, -s);
            let mut z = Complex64::new(1.0, 0.0);
            for a in acc.iter_mut() {
                *a += z;
                z *= w;
            }
        }
        let norm = 1.0 / (positions.len() as f64 * 2.0 * self.domain.half_width);
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for (m, a) in acc.iter().enumerate() {
            let k = dk * m as f64;
            let c = a * (norm * (-0.5 * delta * k * k).exp());
            out[m] = c;
            if m > 0 {
                out[n - m] = c.conj();
            }
        }
        out
    }

    /// Coefficients of a centred bump `A exp(-x^2 / (2 s))`.
    pub(crate) fn bump(&self, amplitude: f64, variance: f64) -> Vec<Complex64> {
        let scale = amplitude * (2.0 * PI * variance).sqrt() / (2.0 * self.domain.half_width);
        self.k
            .iter()
            .map(|k| Complex64::new(scale * (-0.5 * variance * k * k).exp(), 0.0))
            .collect()
    }
}

/// `Q_dt` applied to node values: `e^{-alpha dt}` times the heat flow of
/// variance `dt`, computed as a circular convolution on the grid.
pub fn apply_q(domain: GridDomain, values: &[f64], dt: f64, alpha: f64) -> Result<Vec<f64>> {
    if !(dt >= 0.0) {
        return Err(Error::domain(format!(
            "semigroup time must be non-negative, got {dt}"
        )));
    }
    if values.len() != domain.n_points {
        return Err(Error::config("grid values do not match the grid size"));
    }
    if dt == 0.0 {
        return Ok(values.to_vec());
    }
    let sp = Spectral::new(domain);
    let mut c = sp.coeffs(values);
    sp.heat(&mut c, dt, alpha);
    Ok(sp.values(&c))
}

/// Samples of a field on the grid plus the region where interpolation is allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSamples {
    pub domain: GridDomain,
    pub safe_half_width: f64,
    pub values: Vec<f64>,
}

impl GridSamples {
    /// Cubic (four-point Lagrange) interpolation at `x`.
    #[inline]
    pub fn interpolate(&self, x: f64) -> Option<f64> {
        if !(x.abs() <= self.safe_half_width) {
            return None;
        }
        let h = self.domain.spacing();
        let s = (x + self.domain.half_width) / h;
        let j = s.floor() as usize;
        let t = s - j as f64;
        let v = &self.values;
        let (a, b, c, d) = (v[j - 1], v[j], v[j + 1], v[j + 2]);
        let wa = -t * (t - 1.0) * (t - 2.0) / 6.0;
        let wb = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
        let wc = -(t + 1.0) * t * (t - 2.0) / 2.0;
        let wd = (t + 1.0) * t * (t - 1.0) / 6.0;
        Some(wa * a + wb * b + wc * c + wd * d)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone)]
enum SourceKernel {
    Gaussian { delta: f64 },
    Sampled(KernelDescriptor),
}

/// Grid state of the chemical field for a one-dimensional run.
#[derive(Clone)]
pub struct FieldGrid {
    spectral: Arc<Spectral>,
    params: ModelParams,
    kernel: SourceKernel,
    safe_half_width: f64,
    epsilon: f64,
    step: usize,
    /// Coefficients of the (beta-unweighted) memory term `Theta`.
    theta: Vec<Complex64>,
    /// Coefficients of `h0`, `None` when `h0 = 0`.
    h0: Option<Vec<Complex64>>,
    /// Per-mode `e^{-r eps}` and `eps e^{-r eps / 2}`, `r = alpha + k^2 / 2`.
    decay: Vec<f64>,
    source_weight: Vec<f64>,
}

impl std::fmt::Debug for FieldGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FieldGrid")
            .field("domain", &self.spectral.domain)
            .field("safe_half_width", &self.safe_half_width)
            .field("epsilon", &self.epsilon)
            .field("step", &self.step)
            .finish()
    }
}

impl FieldGrid {
    /// Empty memory (`Theta_0 = 0`) for a run of step `epsilon` up to `horizon`.
    ///
    /// Particles must stay within `L - 6 sqrt(delta + horizon)` of the origin,
    /// which keeps the periodic images of every deposited Gaussian negligible.
    pub fn new(model: &Model, domain: GridDomain, epsilon: f64, horizon: f64) -> Result<Self> {
        if model.dim() != 1 {
            return Err(Error::Unsupported(format!(
                "the grid field evaluator is one-dimensional; dim = {} needs the direct evaluator",
                model.dim()
            )));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::config(format!(
                "step size must lie in (0, 1), got {epsilon}"
            )));
        }
        let spectral = Arc::new(Spectral::new(domain));
        let (kernel, width) = match &model.kernel {
            KernelDescriptor::Gaussian { delta } => {
                (SourceKernel::Gaussian { delta: *delta }, *delta)
            }
            k @ KernelDescriptor::Custom(_) => (SourceKernel::Sampled(k.clone()), 0.0),
        };
        let safe_half_width = domain.half_width - GridDomain::margin(width, horizon);
        if safe_half_width <= 0.0 {
            return Err(Error::config(format!(
                "grid half-width {} leaves no safe region for horizon {horizon}; need more than {}",
                domain.half_width,
                GridDomain::margin(width, horizon)
            )));
        }
        let h0 = match &model.h0 {
            InitialField::Zero => None,
            InitialField::GaussianBump {
                amplitude,
                variance,
            } => Some(spectral.bump(*amplitude, *variance)),
            InitialField::Custom(f) => {
                let vals: Vec<f64> = domain.nodes().iter().map(|&x| f.value(&[x])).collect();
                Some(spectral.coeffs(&vals))
            }
        };
        let alpha = model.params.alpha;
        let rates: Vec<f64> = spectral.k.iter().map(|k| alpha + 0.5 * k * k).collect();
        let decay = rates.iter().map(|r| (-r * epsilon).exp()).collect();
        let source_weight = rates
            .iter()
            .map(|r| epsilon * (-r * 0.5 * epsilon).exp())
            .collect();
        Ok(Self {
            decay,
            source_weight,
            theta: vec![Complex64::new(0.0, 0.0); domain.n_points],
            spectral,
            params: model.params,
            kernel,
            safe_half_width,
            epsilon,
            step: 0,
            h0,
        })
    }

    pub fn domain(&self) -> GridDomain {
        self.spectral.domain
    }

    pub fn safe_half_width(&self) -> f64 {
        self.safe_half_width
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.epsilon
    }

    fn samples(&self, values: Vec<f64>) -> GridSamples {
        GridSamples {
            domain: self.domain(),
            safe_half_width: self.safe_half_width,
            values,
        }
    }

    fn check_inside(&self, positions: &[f64]) -> Result<()> {
        if positions.is_empty() {
            return Err(Error::domain(
                "empty ensemble: at least one particle is required",
            ));
        }
        for (i, &x) in positions.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    particle: i,
                    step: self.step,
                });
            }
            if x.abs() > self.safe_half_width {
                return Err(Error::Escape {
                    particle: i,
                    step: self.step,
                    position: x,
                    limit: self.safe_half_width,
                });
            }
        }
        Ok(())
    }

    /// Coefficients of `g * mu^N` for the given positions.
    pub(crate) fn source_coeffs(&self, positions: &[f64]) -> Result<Vec<Complex64>> {
        self.check_inside(positions)?;
        Ok(match &self.kernel {
            SourceKernel::Gaussian { delta } => self.spectral.gaussian_source(positions, *delta),
            SourceKernel::Sampled(k) => {
                let vals = sampled_deposit(&self.domain(), positions, k);
                self.spectral.coeffs(&vals)
            }
        })
    }

    /// Advance `Theta` by one step with a source already in coefficient form.
    pub(crate) fn advance_coeffs(&mut self, source: &[Complex64]) {
        for (((th, s), d), w) in self
            .theta
            .iter_mut()
            .zip(source)
            .zip(&self.decay)
            .zip(&self.source_weight)
        {
            *th = *th * d + s * w;
        }
        self.step += 1;
    }

    /// One step of the memory recursion
    /// `Theta_{n+1} = Q_eps Theta_n + eps * Q_{eps/2} source`,
    /// with the source given as node values of `g * mu_n`.
    pub fn theta_recursion_step(&mut self, source: &[f64]) -> Result<()> {
        if source.len() != self.domain().n_points {
            return Err(Error::config("source grid does not match the field grid"));
        }
        let c = self.spectral.coeffs(source);
        self.advance_coeffs(&c);
        Ok(())
    }

    /// Deposit `positions` (the state at the current step) and advance one step.
    pub fn advance(&mut self, positions: &[f64]) -> Result<()> {
        let c = self.source_coeffs(positions)?;
        self.advance_coeffs(&c);
        Ok(())
    }

    fn total_coeffs(&self) -> Vec<Complex64> {
        let beta = self.params.beta;
        match &self.h0 {
            None => self.theta.iter().map(|th| th * beta).collect(),
            Some(h0) => {
                let mut h0 = h0.clone();
                self.spectral.heat(&mut h0, self.time(), self.params.alpha);
                h0.iter()
                    .zip(&self.theta)
                    .map(|(a, th)| a + th * beta)
                    .collect()
            }
        }
    }

    pub fn theta_values(&self) -> Vec<f64> {
        self.spectral.values(&self.theta)
    }

    /// `h(t_n, x_j)` at every node.
    pub fn h_values(&self) -> Vec<f64> {
        self.spectral.values(&self.total_coeffs())
    }

    /// `grad h(t_n, .)` at the nodes, by spectral differentiation.
    pub fn gradient(&self) -> GridSamples {
        let d = self.spectral.derivative(&self.total_coeffs());
        self.samples(self.spectral.values(&d))
    }

    /// Chemotactic drift `chi * grad h(t_n, .)` at the nodes.
    pub fn drift(&self) -> GridSamples {
        let chi = self.params.chi;
        let mut g = self.gradient();
        g.values.iter_mut().for_each(|v| *v *= chi);
        g
    }
}

fn sampled_deposit(domain: &GridDomain, positions: &[f64], k: &KernelDescriptor) -> Vec<f64> {
    let inv_n = 1.0 / positions.len() as f64;
    domain
        .nodes()
        .iter()
        .map(|&x| positions.iter().map(|&p| k.value(&[p - x])).sum::<f64>() * inv_n)
        .collect()
}

/// Node values of `(1/N) sum_i g(X_i - x)`.
pub fn deposit_density(
    positions: &[f64],
    kernel: &KernelDescriptor,
    grid: &FieldGrid,
) -> Result<Vec<f64>> {
    grid.check_inside(positions)?;
    match kernel {
        KernelDescriptor::Gaussian { delta } => {
            let c = grid.spectral.gaussian_source(positions, *delta);
            Ok(grid.spectral.values(&c))
        }
        k => Ok(sampled_deposit(&grid.domain(), positions, k)),
    }
}

/// `grad h` at `x` by cubic interpolation of the spectral gradient.
pub fn grad_h_at(grid: &FieldGrid, x: f64) -> Result<f64> {
    let g = grid.gradient();
    g.interpolate(x).ok_or(Error::Escape {
        particle: usize::MAX,
        step: grid.step,
        position: x,
        limit: grid.safe_half_width,
    })
}

/// Per-step position snapshots `Y_0, Y_1, ...` (flat `N * d` arrays).
#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    epsilon: f64,
    dim: usize,
    n_particles: usize,
    /// Index of the oldest retained snapshot.
    first: usize,
    snapshots: VecDeque<Vec<f64>>,
    /// Drop snapshot `k` once `e^{-alpha (t_n - (k+1) eps)}` falls below this.
    truncation_tol: f64,
}

impl HistoryBuffer {
    pub fn new(epsilon: f64, dim: usize, n_particles: usize) -> Self {
        Self {
            epsilon,
            dim,
            n_particles,
            first: 0,
            snapshots: VecDeque::new(),
            truncation_tol: 0.0,
        }
    }

    pub fn with_truncation(mut self, tol: f64) -> Self {
        self.truncation_tol = tol;
        self
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of completed steps `n` (so the history covers `[0, n eps)`).
    pub fn steps(&self) -> usize {
        self.first + self.snapshots.len()
    }

    pub fn retained(&self) -> usize {
        self.snapshots.len()
    }

    pub fn time(&self) -> f64 {
        self.steps() as f64 * self.epsilon
    }

    pub fn push(&mut self, positions: &[f64], alpha: f64) -> Result<()> {
        if positions.len() != self.n_particles * self.dim {
            return Err(Error::config(
                "snapshot has the wrong number of coordinates",
            ));
        }
        self.snapshots.push_back(positions.to_vec());
        if self.truncation_tol > 0.0 {
            let n = self.steps();
            while self.snapshots.front().is_some() {
                let age = (n - (self.first + 1)) as f64 * self.epsilon;
                if (-alpha * age).exp() < self.truncation_tol {
                    self.snapshots.pop_front();
                    self.first += 1;
                } else {
                    break;
                }
            }
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.snapshots
            .iter()
            .enumerate()
            .map(move |(i, s)| (self.first + i, s.as_slice()))
    }
}

/// Two-point Gauss–Legendre nodes on `[-1, 1]`.
const GL2: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];

/// `h(t, x)` and `grad h(t, x)` at `t = n eps` directly from the history:
///
/// `h = Q_t h0(x) + beta sum_{k<n} int_{k eps}^{(k+1) eps} e^{-alpha (t - s)}
///      (1/N) sum_i phi_{t - s + delta}(Y_k^i - x) ds`,
///
/// each interval integral by two-point Gauss–Legendre.
pub fn evaluate_h_direct(
    history: &HistoryBuffer,
    h0: &InitialField,
    p: &ModelParams,
    kernel: &KernelDescriptor,
    x: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let delta = kernel
        .delta()
        .ok_or_else(|| Error::Unsupported("the direct evaluator needs a Gaussian kernel".into()))?;
    let d = history.dim;
    if x.len() != d {
        return Err(Error::config("evaluation point has the wrong dimension"));
    }
    let t = history.time();
    let mut grad = vec![0.0; d];
    let mut h = h0
        .semigroup_closed_form(p.alpha, t, x, &mut grad)
        .ok_or_else(|| Error::Unsupported("the direct evaluator needs a closed-form h0".into()))?;
    let eps = history.epsilon;
    let inv_n = 1.0 / history.n_particles as f64;
    let mut z = vec![0.0; d];
    for (k, snap) in history.iter() {
        let mid = (k as f64 + 0.5) * eps;
        for node in GL2 {
            let s = mid + 0.5 * eps * node;
            let theta = t - s;
            let var = theta + delta;
            let w = 0.5 * eps * (-p.alpha * theta).exp() * p.beta * inv_n;
            for particle in snap.chunks_exact(d) {
                for c in 0..d {
                    z[c] = particle[c] - x[c];
                }
                let phi = gaussian_density(&z, var) * w;
                h += phi;
                for c in 0..d {
                    grad[c] += phi * z[c] / var;
                }
            }
        }
    }
    Ok((h, grad))
}

/// Memory drift kernel
/// `G_theta(x, y) = chi beta e^{-alpha theta} / N sum_i (x_i - y) / (theta + delta) phi_{theta+delta}(x_i - y)`
/// for a Gaussian kernel (`positions` is a flat `N * d` array).
pub fn g_theta_closed_form(
    positions: &[f64],
    y: &[f64],
    theta: f64,
    p: &ModelParams,
    kernel: &KernelDescriptor,
) -> Result<Vec<f64>> {
    let delta = kernel
        .delta()
        .ok_or_else(|| Error::Unsupported("closed-form G_theta needs a Gaussian kernel".into()))?;
    let d = y.len();
    if positions.is_empty() || !positions.len().is_multiple_of(d) {
        return Err(Error::domain("positions must be a non-empty N * d array"));
    }
    let n = positions.len() / d;
    let var = theta + delta;
    let scale = p.chi * p.beta * (-p.alpha * theta).exp() / n as f64;
    let mut out = vec![0.0; d];
    let mut z = vec![0.0; d];
    for particle in positions.chunks_exact(d) {
        for c in 0..d {
            z[c] = particle[c] - y[c];
        }
        let phi = gaussian_density(&z, var);
        for c in 0..d {
            out[c] += scale * z[c] / var * phi;
        }
    }
    Ok(out)
}
