//! Problem instance and the constants derived from it.
//!
//! An instance is the parameter set `(alpha, beta, chi, d)` together with the
//! dispersal kernel `g`, the confinement potential `V`, the initial chemical
//! field `h0` and the initial particle law `mu0`. From these we compute the
//! convexity threshold of the uniform-in-time theory, the constants of the
//! mean-square propagation-of-chaos bound and the a-priori field bounds.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{self, Domain};

/// Rate and coupling parameters. The field time scale `gamma` is fixed to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub beta: f64,
    pub chi: f64,
    pub dim: usize,
}

impl ModelParams {
    pub fn new(alpha: f64, beta: f64, chi: f64, dim: usize) -> Result<Self> {
        let p = Self {
            alpha,
            beta,
            chi,
            dim,
        };
        p.validate()?;
        Ok(p)
    }

    /// `beta = 0` and `chi = 0` are accepted as degenerate test modes
    /// (no production, no chemotaxis); everything else must be positive.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config(format!(
                "beta must be non-negative, got {}",
                self.beta
            )));
        }
        if !(self.chi >= 0.0 && self.chi.is_finite()) {
            return Err(Error::config(format!(
                "chi must be non-negative, got {}",
                self.chi
            )));
        }
        if self.dim == 0 || self.dim > 3 {
            return Err(Error::config(format!(
                "dim must be 1, 2 or 3, got {}",
                self.dim
            )));
        }
        Ok(())
    }
}

/// Sup-norms `(|f|_inf, |grad f|_inf, |Hess f|_inf)`; the Hessian norm is the
/// entrywise supremum `sup_{i,j} sup_x |d_i d_j f(x)|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupNorms {
    pub value: f64,
    pub gradient: f64,
    pub hessian: f64,
}

impl SupNorms {
    pub const ZERO: SupNorms = SupNorms {
        value: 0.0,
        gradient: 0.0,
        hessian: 0.0,
    };
}

/// A user-supplied `C^2_b` function with analytic derivatives.
pub trait SmoothFunction: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    fn hessian_entry(&self, x: &[f64], i: usize, j: usize) -> f64;
    /// Declared sup-norms. `None` means the caller did not declare them,
    /// which is a configuration error wherever constants are needed.
    fn declared_norms(&self) -> Option<SupNorms>;
}

#[derive(Clone)]
pub enum KernelDescriptor {
    /// `g(x) = (2 pi delta)^{-d/2} exp(-|x|^2 / (2 delta))`.
    Gaussian { delta: f64 },
    /// Must integrate to one; not checked.
    Custom(Arc<dyn SmoothFunction>),
}

impl fmt::Debug for KernelDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelDescriptor::Gaussian { delta } => write!(f, "Gaussian {{ delta: {delta} }}"),
            KernelDescriptor::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Heat kernel `phi_v(z) = (2 pi v)^{-d/2} exp(-|z|^2 / (2 v))`.
#[inline]
pub fn gaussian_density(z: &[f64], variance: f64) -> f64 {
    let r2: f64 = z.iter().map(|v| v * v).sum();
    (TAU * variance).powf(-(z.len() as f64) / 2.0) * (-r2 / (2.0 * variance)).exp()
}

impl KernelDescriptor {
    pub fn gaussian(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::config(format!(
                "kernel variance must be positive, got {delta}"
            )));
        }
        Ok(KernelDescriptor::Gaussian { delta })
    }

    pub fn delta(&self) -> Option<f64> {
        match self {
            KernelDescriptor::Gaussian { delta } => Some(*delta),
            KernelDescriptor::Custom(_) => None,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            KernelDescriptor::Gaussian { delta } => gaussian_density(x, *delta),
            KernelDescriptor::Custom(f) => f.value(x),
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            KernelDescriptor::Gaussian { delta } => {
                let g = gaussian_density(x, *delta);
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = -xi / delta * g;
                }
            }
            KernelDescriptor::Custom(f) => f.gradient(x, out),
        }
    }

    pub fn hessian_entry(&self, x: &[f64], i: usize, j: usize) -> f64 {
        match self {
            KernelDescriptor::Gaussian { delta } => {
                let g = gaussian_density(x, *delta);
                let kron = if i == j { 1.0 / delta } else { 0.0 };
                (x[i] * x[j] / (delta * delta) - kron) * g
            }
            KernelDescriptor::Custom(f) => f.hessian_entry(x, i, j),
        }
    }
}

/// `(|g|_inf, |grad g|_inf, |Hess g|_inf)`.
///
/// For the Gaussian kernel: the value peaks at the origin; `|grad g|` peaks on
/// the sphere `|x| = sqrt(delta)`; the largest Hessian entry is the diagonal
/// one at the origin, `g(0) / delta` (off-diagonal entries peak at
/// `g(0) e^{-1} / delta`, diagonal side lobes at `2 e^{-3/2} g(0) / delta`).
pub fn kernel_sup_norms(kernel: &KernelDescriptor, dim: usize) -> Result<SupNorms> {
    match kernel {
        KernelDescriptor::Gaussian { delta } => {
            let peak = (TAU * delta).powf(-(dim as f64) / 2.0);
            Ok(SupNorms {
                value: peak,
                gradient: peak * (-0.5f64).exp() / delta.sqrt(),
                hessian: peak / delta,
            })
        }
        KernelDescriptor::Custom(f) => f.declared_norms().ok_or_else(|| {
            Error::config("custom kernel must declare its sup-norms (value, gradient, hessian)")
        }),
    }
}

/// Sup-norms of a one-dimensional function by grid maximisation over
/// `[-half_width, half_width]`.
pub fn grid_sup_norms_1d<F>(f: F, half_width: f64, step: f64) -> SupNorms
where
    F: Fn(f64) -> (f64, f64, f64),
{
    let n = (2.0 * half_width / step).round() as usize;
    let mut out = SupNorms::ZERO;
    for i in 0..=n {
        let x = -half_width + i as f64 * step;
        let (v, g, h) = f(x);
        out.value = out.value.max(v.abs());
        out.gradient = out.gradient.max(g.abs());
        out.hessian = out.hessian.max(h.abs());
    }
    out
}

/// Sample a custom function on a box and warn when it exceeds its declared
/// norms. Returns the warnings that were emitted.
pub fn verify_declared_norms(
    f: &dyn SmoothFunction,
    dim: usize,
    half_width: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<String>> {
    let declared = f
        .declared_norms()
        .ok_or_else(|| Error::config("custom function has no declared sup-norms"))?;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut seen = SupNorms::ZERO;
    let mut x = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    for _ in 0..samples {
        x.iter_mut()
            .for_each(|v| *v = rng.random_range(-half_width..=half_width));
        seen.value = seen.value.max(f.value(&x).abs());
        f.gradient(&x, &mut g);
        seen.gradient = seen
            .gradient
            .max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
        for i in 0..dim {
            for j in 0..dim {
                seen.hessian = seen.hessian.max(f.hessian_entry(&x, i, j).abs());
            }
        }
    }
    let mut warnings = Vec::new();
    let tol = 1e-9;
    for (name, s, d) in [
        ("value", seen.value, declared.value),
        ("gradient", seen.gradient, declared.gradient),
        ("hessian", seen.hessian, declared.hessian),
    ] {
        if s > d * (1.0 + tol) + tol {
            let w = format!("declared {name} sup-norm {d} is exceeded by sampled value {s}");
            log::warn!("{w}");
            warnings.push(w);
        }
    }
    Ok(warnings)
}

/// A user-supplied confinement potential.
pub trait CustomPotential: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    /// Lipschitz constant of the gradient.
    fn lipschitz_grad(&self) -> f64;
    /// Half-width of the box in which the convexity modulus is sampled.
    fn sample_half_width(&self) -> f64 {
        5.0
    }
}

#[derive(Clone)]
pub enum PotentialDescriptor {
    /// `V(x) = <x, A x> / 2` with `A` symmetric positive semi-definite.
    Quadratic {
        matrix: DMatrix<f64>,
    },
    Custom(Arc<dyn CustomPotential>),
}

impl fmt::Debug for PotentialDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PotentialDescriptor::Quadratic { matrix } => {
                write!(f, "Quadratic {{ matrix: {:?} }}", matrix.as_slice())
            }
            PotentialDescriptor::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl PotentialDescriptor {
    /// `V(x) = a |x|^2 / 2`.
    pub fn isotropic(a: f64, dim: usize) -> Result<Self> {
        Self::quadratic(DMatrix::from_diagonal_element(dim, dim, a))
    }

    pub fn quadratic(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::config("potential matrix must be square"));
        }
        let n = matrix.nrows();
        for i in 0..n {
            for j in 0..i {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-12 * (1.0 + matrix[(i, j)].abs()) {
                    return Err(Error::config("potential matrix must be symmetric"));
                }
            }
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("potential matrix has non-finite entries"));
        }
        let eig = SymmetricEigen::new(matrix.clone()).eigenvalues;
        if eig.iter().any(|&e| e < -1e-12) {
            return Err(Error::config(
                "potential matrix must be positive semi-definite",
            ));
        }
        Ok(PotentialDescriptor::Quadratic { matrix })
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            PotentialDescriptor::Quadratic { matrix } => Some(matrix.nrows()),
            PotentialDescriptor::Custom(_) => None,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            PotentialDescriptor::Quadratic { matrix } => {
                let n = matrix.nrows();
                let mut acc = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        acc += x[i] * matrix[(i, j)] * x[j];
                    }
                }
                0.5 * acc
            }
            PotentialDescriptor::Custom(v) => v.value(x),
        }
    }

    #[inline]
    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            PotentialDescriptor::Quadratic { matrix } => {
                let n = matrix.nrows();
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += matrix[(i, j)] * x[j];
                    }
                    out[i] = acc;
                }
            }
            PotentialDescriptor::Custom(v) => v.gradient(x, out),
        }
    }

    /// `L_{grad V}`: the largest eigenvalue for a quadratic potential.
    pub fn lipschitz_grad(&self) -> f64 {
        match self {
            PotentialDescriptor::Quadratic { matrix } => SymmetricEigen::new(matrix.clone())
                .eigenvalues
                .iter()
                .fold(0.0f64, |m, e| m.max(e.abs())),
            PotentialDescriptor::Custom(v) => v.lipschitz_grad(),
        }
    }
}

/// Convexity modulus `v* = inf_{x != y} <x - y, grad V(x) - grad V(y)> / |x - y|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexityModulus {
    pub value: f64,
    /// False when `value` is the minimum over sampled pairs.
    pub exact: bool,
    pub samples: usize,
}

pub const CONVEXITY_SAMPLE_PAIRS: usize = 100_000;

pub fn convexity_modulus(v: &PotentialDescriptor, dim: usize) -> ConvexityModulus {
    convexity_modulus_sampled(v, dim, CONVEXITY_SAMPLE_PAIRS, 0x5eed_c0de)
}

pub fn convexity_modulus_sampled(
    v: &PotentialDescriptor,
    dim: usize,
    pairs: usize,
    seed: u64,
) -> ConvexityModulus {
    match v {
        PotentialDescriptor::Quadratic { matrix } => {
            let min = SymmetricEigen::new(matrix.clone())
                .eigenvalues
                .iter()
                .fold(f64::INFINITY, |m, &e| m.min(e));
            ConvexityModulus {
                value: min,
                exact: true,
                samples: 0,
            }
        }
        PotentialDescriptor::Custom(p) => {
            let b = p.sample_half_width();
            let mut rng = StdRng::seed_from_u64(seed);
            let (mut x, mut y) = (vec![0.0; dim], vec![0.0; dim]);
            let (mut gx, mut gy) = (vec![0.0; dim], vec![0.0; dim]);
            let mut best = f64::INFINITY;
            for _ in 0..pairs {
                x.iter_mut().for_each(|c| *c = rng.random_range(-b..=b));
                y.iter_mut().for_each(|c| *c = rng.random_range(-b..=b));
                let d2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2 < 1e-12 {
                    continue;
                }
                p.gradient(&x, &mut gx);
                p.gradient(&y, &mut gy);
                let dot: f64 = (0..dim).map(|i| (x[i] - y[i]) * (gx[i] - gy[i])).sum();
                best = best.min(dot / d2);
            }
            ConvexityModulus {
                value: best,
                exact: false,
                samples: pairs,
            }
        }
    }
}

/// Initial chemical field `h0`.
#[derive(Clone)]
pub enum InitialField {
    Zero,
    /// `h0(x) = amplitude * exp(-|x|^2 / (2 variance))`.
    GaussianBump {
        amplitude: f64,
        variance: f64,
    },
    Custom(Arc<dyn SmoothFunction>),
}

impl fmt::Debug for InitialField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialField::Zero => write!(f, "Zero"),
            InitialField::GaussianBump {
                amplitude,
                variance,
            } => {
                write!(
                    f,
                    "GaussianBump {{ amplitude: {amplitude}, variance: {variance} }}"
                )
            }
            InitialField::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl InitialField {
    pub fn gaussian_bump(amplitude: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite() && amplitude.is_finite()) {
            return Err(Error::config(
                "h0 bump needs a finite amplitude and positive variance",
            ));
        }
        Ok(InitialField::GaussianBump {
            amplitude,
            variance,
        })
    }

    pub fn sup_norms(&self, dim: usize) -> Result<SupNorms> {
        match self {
            InitialField::Zero => Ok(SupNorms::ZERO),
            InitialField::GaussianBump {
                amplitude,
                variance,
            } => {
                let a = amplitude.abs();
                let _ = dim;
                Ok(SupNorms {
                    value: a,
                    gradient: a * (-0.5f64).exp() / variance.sqrt(),
                    hessian: a / variance,
                })
            }
            InitialField::Custom(f) => f
                .declared_norms()
                .ok_or_else(|| Error::config("custom h0 must declare its sup-norms")),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            InitialField::Zero => 0.0,
            InitialField::GaussianBump {
                amplitude,
                variance,
            } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                amplitude * (-r2 / (2.0 * variance)).exp()
            }
            InitialField::Custom(f) => f.value(x),
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            InitialField::Zero => out.iter_mut().for_each(|v| *v = 0.0),
            InitialField::GaussianBump { variance, .. } => {
                let h = self.value(x);
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = -xi / variance * h;
                }
            }
            InitialField::Custom(f) => f.gradient(x, out),
        }
    }

    /// `Q_t h0(x)` and its gradient in closed form. `None` for custom fields.
    ///
    /// For the bump, heat smoothing adds `t` to the variance:
    /// `Q_t h0(x) = e^{-alpha t} A (s / (s + t))^{d/2} exp(-|x|^2 / (2 (s + t)))`.
    pub fn semigroup_closed_form(
        &self,
        alpha: f64,
        t: f64,
        x: &[f64],
        grad: &mut [f64],
    ) -> Option<f64> {
        match self {
            InitialField::Zero => {
                grad.iter_mut().for_each(|v| *v = 0.0);
                Some(0.0)
            }
            InitialField::GaussianBump {
                amplitude,
                variance,
            } => {
                let v = variance + t;
                let r2: f64 = x.iter().map(|c| c * c).sum();
                let d = x.len() as f64;
                let val = (-alpha * t).exp()
                    * amplitude
                    * (variance / v).powf(d / 2.0)
                    * (-r2 / (2.0 * v)).exp();
                for (o, xi) in grad.iter_mut().zip(x) {
                    *o = -xi / v * val;
                }
                Some(val)
            }
            InitialField::Custom(_) => None,
        }
    }
}

/// Law of the i.i.d. initial positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialDistribution {
    PointMass { at: f64 },
    Gaussian { mean: f64, variance: f64 },
    Uniform { low: f64, high: f64 },
}

impl InitialDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InitialDistribution::PointMass { at } if at.is_finite() => Ok(()),
            InitialDistribution::Gaussian { mean, variance }
                if mean.is_finite() && variance > 0.0 && variance.is_finite() =>
            {
                Ok(())
            }
            InitialDistribution::Uniform { low, high } if low.is_finite() && high > low => Ok(()),
            _ => Err(Error::config(format!(
                "invalid initial distribution {self:?}"
            ))),
        }
    }

    /// Draw particle `particle`'s initial position (every coordinate i.i.d.).
    /// Counter-based, so particle `i` gets the same draw in every system that
    /// shares `seed`, whatever its size.
    pub fn sample(&self, seed: u64, particle: usize, out: &mut [f64]) {
        match *self {
            InitialDistribution::PointMass { at } => out.iter_mut().for_each(|v| *v = at),
            InitialDistribution::Gaussian { mean, variance } => {
                noise::normals(seed, Domain::Initial, particle as u64, 0, out);
                let sd = variance.sqrt();
                out.iter_mut().for_each(|v| *v = mean + sd * *v);
            }
            InitialDistribution::Uniform { low, high } => {
                for (c, v) in out.iter_mut().enumerate() {
                    let u = noise::uniform(seed, Domain::Initial, particle as u64, c as u64);
                    *v = low + (high - low) * u;
                }
            }
        }
    }

    /// Per-coordinate second moment.
    pub fn second_moment(&self) -> f64 {
        match *self {
            InitialDistribution::PointMass { at } => at * at,
            InitialDistribution::Gaussian { mean, variance } => mean * mean + variance,
            InitialDistribution::Uniform { low, high } => {
                (high * high + high * low + low * low) / 3.0
            }
        }
    }

    /// Largest `|x|` that a draw can reach, if bounded.
    pub fn support_radius(&self) -> Option<f64> {
        match *self {
            InitialDistribution::PointMass { at } => Some(at.abs()),
            InitialDistribution::Gaussian { .. } => None,
            InitialDistribution::Uniform { low, high } => Some(low.abs().max(high.abs())),
        }
    }
}

/// A complete problem instance.
#[derive(Debug, Clone)]
pub struct Model {
    pub params: ModelParams,
    pub kernel: KernelDescriptor,
    pub potential: PotentialDescriptor,
    pub h0: InitialField,
    pub mu0: InitialDistribution,
}

impl Model {
    pub fn new(
        params: ModelParams,
        kernel: KernelDescriptor,
        potential: PotentialDescriptor,
        h0: InitialField,
        mu0: InitialDistribution,
    ) -> Result<Self> {
        params.validate()?;
        mu0.validate()?;
        if let Some(d) = potential.dim() {
            if d != params.dim {
                return Err(Error::config(format!(
                    "potential matrix is {d}x{d} but dim = {}",
                    params.dim
                )));
            }
        }
        Ok(Self {
            params,
            kernel,
            potential,
            h0,
            mu0,
        })
    }

    /// `d = 1, alpha = beta = chi = 1`, Gaussian `g` with `delta = 1`,
    /// `h0 = 0`, `V(x) = x^2 / 2` and `mu0 = N(0, 1/2)`.
    pub fn default_instance() -> Self {
        Self::new(
            ModelParams::new(1.0, 1.0, 1.0, 1).unwrap(),
            KernelDescriptor::Gaussian { delta: 1.0 },
            PotentialDescriptor::isotropic(1.0, 1).unwrap(),
            InitialField::Zero,
            InitialDistribution::Gaussian {
                mean: 0.0,
                variance: 0.5,
            },
        )
        .unwrap()
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn kernel_norms(&self) -> Result<SupNorms> {
        kernel_sup_norms(&self.kernel, self.params.dim)
    }

    pub fn h0_norms(&self) -> Result<SupNorms> {
        self.h0.sup_norms(self.params.dim)
    }

    pub fn convexity(&self) -> ConvexityModulus {
        convexity_modulus(&self.potential, self.params.dim)
    }

    pub fn assumption(&self) -> Result<AssumptionReport> {
        check_assumption_a(&self.params, &self.kernel, &self.h0, &self.potential)
    }

    pub fn constants(&self) -> Result<TheoreticalConstants> {
        compute_constants(&self.params, &self.kernel, &self.h0, &self.potential)
    }

    pub fn field_gradient_bound(&self, t: f64) -> Result<f64> {
        field_gradient_bound(&self.params, &self.kernel, &self.h0, t)
    }

    /// Lipschitz bound of `grad h(t, .)`:
    /// `d (e^{-alpha t} |Hess h0|_inf + beta |Hess g|_inf / alpha)`.
    pub fn field_lipschitz_bound(&self, t: f64) -> Result<f64> {
        let g = self.kernel_norms()?;
        let h = self.h0_norms()?;
        let p = &self.params;
        Ok(p.dim as f64 * ((-p.alpha * t).exp() * h.hessian + p.beta * g.hessian / p.alpha))
    }

    /// Stability threshold for the Euler step: `min(0.1, 1 / (2 v*))`.
    pub fn epsilon0(&self) -> f64 {
        let v = self.convexity().value;
        if v > 0.0 {
            0.1f64.min(1.0 / (2.0 * v))
        } else {
            0.1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub v_star: f64,
    pub v_star_exact: bool,
    pub lambda_threshold: f64,
    pub satisfied: bool,
    pub margin: f64,
}

/// `lambda = (|Hess h0|_inf + 2 beta |Hess g|_inf / alpha) chi d`.
pub fn lambda_threshold(p: &ModelParams, g: &SupNorms, h0: &SupNorms) -> f64 {
    (h0.hessian + 2.0 * p.beta * g.hessian / p.alpha) * p.chi * p.dim as f64
}

pub fn check_assumption_a(
    p: &ModelParams,
    k: &KernelDescriptor,
    h0: &InitialField,
    v: &PotentialDescriptor,
) -> Result<AssumptionReport> {
    let g = kernel_sup_norms(k, p.dim)?;
    let h = h0.sup_norms(p.dim)?;
    let lambda = lambda_threshold(p, &g, &h);
    let vs = convexity_modulus(v, p.dim);
    let margin = vs.value - lambda;
    Ok(AssumptionReport {
        v_star: vs.value,
        v_star_exact: vs.exact,
        lambda_threshold: lambda,
        satisfied: margin > 0.0,
        margin,
    })
}

/// Constants of the mean-square propagation-of-chaos estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalConstants {
    pub alpha: f64,
    pub v_star: f64,
    pub lambda_threshold: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub lambda_tilde: f64,
    pub c2_tilde: f64,
    pub c3_tilde: f64,
    /// Non-negative root of `r^2 - (lambda_tilde - alpha) r - c2_tilde`.
    pub r1: f64,
    /// Non-positive root of the same polynomial.
    pub r2: f64,
    /// `c3_tilde / (r1 - r2) * (1 + alpha / (lambda_tilde - r1))`; present only
    /// when `lambda_tilde > r1`. Bounds `sqrt(N) * sup_t sqrt(E|X^i - Xbar^i|^2)`.
    pub poc_bound_const: Option<f64>,
}

/// Roots of `r^2 - b r - c` with `c >= 0`, ordered `(r1 >= 0 >= r2)`.
///
/// Uses the cancellation-free pairing `r1 r2 = -c`.
fn characteristic_roots(b: f64, c: f64) -> (f64, f64) {
    let disc = (b * b + 4.0 * c).sqrt();
    if c == 0.0 {
        return (b.max(0.0), b.min(0.0));
    }
    if b >= 0.0 {
        let r1 = 0.5 * (b + disc);
        (r1, -c / r1)
    } else {
        let r2 = 0.5 * (b - disc);
        (-c / r2, r2)
    }
}

pub fn compute_constants(
    p: &ModelParams,
    k: &KernelDescriptor,
    h0: &InitialField,
    v: &PotentialDescriptor,
) -> Result<TheoreticalConstants> {
    let g = kernel_sup_norms(k, p.dim)?;
    let h = h0.sup_norms(p.dim)?;
    let d = p.dim as f64;
    let v_star = convexity_modulus(v, p.dim).value;
    let c1 = d * h.hessian;
    let c2 = d * g.hessian;
    let c3 = g.gradient;
    let lambda_tilde = v_star - c1 * p.chi - c2 * p.chi * p.beta / p.alpha;
    let c2_tilde = c2 * p.chi * p.beta;
    let c3_tilde = 2.0 * c3 * p.chi * p.beta / p.alpha;
    let (r1, r2) = characteristic_roots(lambda_tilde - p.alpha, c2_tilde);
    let poc_bound_const = if lambda_tilde > r1 && r1 > r2 {
        Some(c3_tilde / (r1 - r2) * (1.0 + p.alpha / (lambda_tilde - r1)))
    } else {
        None
    };
    Ok(TheoreticalConstants {
        alpha: p.alpha,
        v_star,
        lambda_threshold: lambda_threshold(p, &g, &h),
        c1,
        c2,
        c3,
        lambda_tilde,
        c2_tilde,
        c3_tilde,
        r1,
        r2,
        poc_bound_const,
    })
}

impl TheoreticalConstants {
    /// Time-resolved bound on `sqrt(N) * sqrt(E|X^{i,N}_t - Xbar^i_t|^2)`:
    ///
    /// `c3~/(r1 - r2) [e^{(r1-l)t} - e^{(r2-l)t}
    ///     + alpha ((1 - e^{(r1-l)t})/(l - r1) - (1 - e^{(r2-l)t})/(l - r2))]`
    /// with `l = lambda_tilde`. Only meaningful when `poc_bound_const` exists.
    pub fn poc_bound_profile(&self, t: f64) -> Option<f64> {
        self.poc_bound_const?;
        let l = self.lambda_tilde;
        let (e1, e2) = (((self.r1 - l) * t).exp(), ((self.r2 - l) * t).exp());
        let bracket =
            e1 - e2 + self.alpha * ((1.0 - e1) / (l - self.r1) - (1.0 - e2) / (l - self.r2));
        Some(self.c3_tilde / (self.r1 - self.r2) * bracket)
    }
}

/// `e^{-alpha t} |grad h0|_inf + beta |grad g|_inf / alpha`.
pub fn field_gradient_bound(
    p: &ModelParams,
    k: &KernelDescriptor,
    h0: &InitialField,
    t: f64,
) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::domain(format!("time must be non-negative, got {t}")));
    }
    let g = kernel_sup_norms(k, p.dim)?;
    let h = h0.sup_norms(p.dim)?;
    Ok((-p.alpha * t).exp() * h.gradient + p.beta * g.gradient / p.alpha)
}

/// `(2 pi delta)^{-1/2}` shortcut used in tests and docs.
pub fn gaussian_peak_1d(delta: f64) -> f64 {
    1.0 / (2.0 * PI * delta).sqrt()
}
