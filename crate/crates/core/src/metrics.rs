//! Functionals of empirical measures: Wasserstein distances, moments,
//! tail probabilities and log-log slope fits.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::noise::{self, Domain};

/// Largest cloud accepted by [`wp_assignment`].
pub const ASSIGNMENT_CAP: usize = 512;

/// Exponent at which `exp` is clamped in [`sq_exp_moment`].
const EXP_CAP: f64 = 700.0;

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

/// Uniformly weighted point cloud, stored as a flat `M * d` array.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    points: Vec<f64>,
    dim: usize,
}

impl EmpiricalMeasure {
    pub fn new(points: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(Error::domain(
                "a measure needs at least one point of positive dimension",
            ));
        }
        if let Some(i) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "point {} has a non-finite coordinate",
                i / dim
            )));
        }
        Ok(Self { points, dim })
    }

    pub fn from_1d(points: &[f64]) -> Result<Self> {
        Self::new(points.to_vec(), 1)
    }

    /// Read one point per row of comma-separated coordinates. Blank lines,
    /// `#` comments and a leading non-numeric header row are skipped.
    pub fn read_csv(reader: impl std::io::BufRead) -> Result<Self> {
        let mut points = Vec::new();
        let mut dim = None;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|f| f.trim().parse::<f64>()).collect();
            let row = match row {
                Ok(r) => r,
                Err(_) if dim.is_none() && points.is_empty() => continue,
                Err(e) => return Err(Error::config(format!("line {}: {e}", lineno + 1))),
            };
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(Error::config(format!(
                        "line {}: expected {d} columns, found {}",
                        lineno + 1,
                        row.len()
                    )))
                }
                Some(_) => {}
            }
            points.extend(row);
        }
        let dim = dim.ok_or_else(|| Error::config("no points in input"))?;
        Self::new(points, dim)
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn sorted_1d(&self) -> Vec<f64> {
        let mut v = self.points.clone();
        v.sort_by(f64::total_cmp);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMethod {
    Quantile1d,
    Assignment,
    Sliced,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceReport {
    pub value: f64,
    pub method: DistanceMethod,
    pub exact: bool,
    /// Monte-Carlo standard error, for estimates.
    pub std_error: Option<f64>,
    pub projections: Option<usize>,
}

impl DistanceReport {
    fn exact(value: f64, method: DistanceMethod) -> Self {
        Self {
            value,
            method,
            exact: true,
            std_error: None,
            projections: None,
        }
    }
}

fn check_1d_pair(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<()> {
    if mu.dim != 1 || nu.dim != 1 {
        return Err(Error::Precondition(
            "quantile distances need one-dimensional measures".into(),
        ));
    }
    if mu.len() != nu.len() {
        return Err(Error::Precondition(format!(
            "sample counts differ ({} vs {}); use wp_assignment or w1_1d_unequal",
            mu.len(),
            nu.len()
        )));
    }
    Ok(())
}

/// `W_p` by the cheapest exact method for the pair: sorted pairing in one
/// dimension, the CDF integral for unequal one-dimensional `W_1`, and
/// assignment otherwise.
pub fn wasserstein(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: u32) -> Result<DistanceReport> {
    match (mu.dim == 1 && nu.dim == 1, mu.len() == nu.len(), p) {
        (true, true, 1) => w1_1d(mu, nu),
        (true, true, 2) => w2_1d(mu, nu),
        (true, false, 1) => w1_1d_unequal(mu, nu),
        _ => wp_assignment(mu, nu, p),
    }
}

/// `W_1` of two equal-size one-dimensional clouds via the sorted pairing.
pub fn w1_1d(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<DistanceReport> {
    check_1d_pair(mu, nu)?;
    let (a, b) = (mu.sorted_1d(), nu.sorted_1d());
    let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
    Ok(DistanceReport::exact(
        s / a.len() as f64,
        DistanceMethod::Quantile1d,
    ))
}

/// `W_2` of two equal-size one-dimensional clouds via the sorted pairing.
pub fn w2_1d(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<DistanceReport> {
    check_1d_pair(mu, nu)?;
    let (a, b) = (mu.sorted_1d(), nu.sorted_1d());
    let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(DistanceReport::exact(
        (s / a.len() as f64).sqrt(),
        DistanceMethod::Quantile1d,
    ))
}

/// `W_1` of one-dimensional clouds of any sizes, `int |F_mu - F_nu| dx`.
pub fn w1_1d_unequal(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<DistanceReport> {
    if mu.dim != 1 || nu.dim != 1 {
        return Err(Error::Precondition(
            "quantile distances need one-dimensional measures".into(),
        ));
    }
    let (a, b) = (mu.sorted_1d(), nu.sorted_1d());
    let (wa, wb) = (1.0 / a.len() as f64, 1.0 / b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut last = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        total += (fa - fb).abs() * (x - last);
        while i < a.len() && a[i] == x {
            fa += wa;
            i += 1;
        }
        while j < b.len() && b[j] == x {
            fb += wb;
            j += 1;
        }
        last = x;
    }
    Ok(DistanceReport::exact(total, DistanceMethod::Quantile1d))
}

fn cost(x: &[f64], y: &[f64], p: u32) -> f64 {
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    match p {
        1 => sq.sqrt(),
        _ => sq,
    }
}

/// Minimum-cost perfect matching on a square cost matrix (row-major), by
/// the shortest augmenting path method with potentials. Returns the
/// column assigned to each row.
pub fn hungarian(costs: &[f64], n: usize) -> Vec<usize> {
    // 1-indexed arrays; column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = costs[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    assignment
}

/// Exact `W_p` (`p` in {1, 2}) between equal-size clouds by optimal assignment.
pub fn wp_assignment(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    p: u32,
) -> Result<DistanceReport> {
    if p != 1 && p != 2 {
        return Err(Error::config(format!(
            "only p = 1 and p = 2 are supported, got {p}"
        )));
    }
    if mu.dim != nu.dim || mu.len() != nu.len() {
        return Err(Error::Precondition(
            "assignment needs equal sizes and dimensions".into(),
        ));
    }
    let m = mu.len();
    if m > ASSIGNMENT_CAP {
        return Err(Error::CapExceeded {
            what: "assignment size (use sliced_w1 for large clouds)".into(),
            required: m as u64,
            cap: ASSIGNMENT_CAP as u64,
        });
    }
    let mut c = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            c.push(cost(mu.point(i), nu.point(j), p));
        }
    }
    let a = hungarian(&c, m);
    let total: f64 = a.iter().enumerate().map(|(i, &j)| c[i * m + j]).sum();
    let mean = total / m as f64;
    let value = if p == 2 { mean.sqrt() } else { mean };
    Ok(DistanceReport::exact(value, DistanceMethod::Assignment))
}

/// Sliced `W_1`: mean over random unit directions of the 1-D `W_1` of the projections.
pub fn sliced_w1(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    n_projections: usize,
    seed: u64,
) -> Result<DistanceReport> {
    if mu.dim != nu.dim {
        return Err(Error::Precondition(
            "measures live in different dimensions".into(),
        ));
    }
    if n_projections < 2 {
        return Err(Error::config("sliced W1 needs at least two projections"));
    }
    let d = mu.dim;
    let project = |m: &EmpiricalMeasure, dir: &[f64]| {
        let v = (0..m.len())
            .map(|i| m.point(i).iter().zip(dir).map(|(a, b)| a * b).sum())
            .collect::<Vec<f64>>();
        EmpiricalMeasure::from_1d(&v)
    };
    let mut values = Vec::with_capacity(n_projections);
    let mut dir = vec![0.0; d];
    for k in 0..n_projections {
        noise::normals(seed, Domain::Projection, 0, k as u64, &mut dir);
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|x| *x /= norm);
        values.push(w1_1d_unequal(&project(mu, &dir)?, &project(nu, &dir)?)?.value);
    }
    let (mean, se) = mean_and_se(&values);
    Ok(DistanceReport {
        value: mean,
        method: DistanceMethod::Sliced,
        exact: false,
        std_error: Some(se),
        projections: Some(n_projections),
    })
}

/// Sample mean and its standard error (zero for a single sample).
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub theta: f64,
    pub value: f64,
    pub std_error: f64,
    /// Set when some exponent reached the clamp; `value` is then a lower bound.
    pub infinite: bool,
}

/// `S_theta = mean of exp(theta |x|^2)` with standard error.
pub fn sq_exp_moment(mu: &EmpiricalMeasure, theta: f64) -> Result<MomentReport> {
    if !(theta > 0.0) {
        return Err(Error::domain(format!(
            "theta must be positive, got {theta}"
        )));
    }
    let mut infinite = false;
    let vals: Vec<f64> = (0..mu.len())
        .map(|i| {
            let e = theta * mu.point(i).iter().map(|x| x * x).sum::<f64>();
            if e >= EXP_CAP {
                infinite = true;
            }
            e.min(EXP_CAP).exp()
        })
        .collect();
    let (value, std_error) = mean_and_se(&vals);
    Ok(MomentReport {
        theta,
        value,
        std_error,
        infinite,
    })
}

/// Positions sampled on a regular time grid: `frames[k]` holds the flat
/// positions of every path at time `k * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySeries {
    pub dt: f64,
    pub dim: usize,
    pub frames: Vec<Vec<f64>>,
}

impl TrajectorySeries {
    fn index_of(&self, t: f64) -> Result<usize> {
        let k = (t / self.dt).round();
        if !(t >= 0.0)
            || (k * self.dt - t).abs() > 1e-9 * self.dt.max(t)
            || k as usize >= self.frames.len()
        {
            return Err(Error::domain(format!(
                "time {t} is not on the recorded grid"
            )));
        }
        Ok(k as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Monte-Carlo estimate of `E|X_t - X_s|^p` over all recorded paths.
pub fn increment_moment(series: &TrajectorySeries, s: f64, t: f64, p: f64) -> Result<Estimate> {
    let (a, b) = (series.index_of(s)?, series.index_of(t)?);
    let d = series.dim;
    let vals: Vec<f64> = series.frames[a]
        .chunks_exact(d)
        .zip(series.frames[b].chunks_exact(d))
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>()
                .sqrt()
                .powf(p)
        })
        .collect();
    let (mean, std_error) = mean_and_se(&vals);
    Ok(Estimate {
        mean,
        std_error,
        samples: vals.len(),
    })
}

/// Minimum replications for a tail estimate.
pub const MIN_TAIL_REPLICATIONS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailEstimate {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub exceedances: usize,
    pub replications: usize,
}

/// `P(W > eps)` with a 95% Wilson score interval.
pub fn tail_probability(samples: &[f64], eps: f64) -> Result<TailEstimate> {
    if samples.len() < MIN_TAIL_REPLICATIONS {
        return Err(Error::Precondition(format!(
            "tail estimates need at least {MIN_TAIL_REPLICATIONS} replications, got {}",
            samples.len()
        )));
    }
    let k = samples.iter().filter(|&&w| w > eps).count();
    let (lower, upper) = wilson_interval(k, samples.len(), Z95);
    Ok(TailEstimate {
        estimate: k as f64 / samples.len() as f64,
        lower,
        upper,
        exceedances: k,
        replications: samples.len(),
    })
}

pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let centre = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y = slope * x + intercept`.
pub fn slope_fit(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::Precondition(
            "a slope fit needs at least three (x, y) pairs".into(),
        ));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::domain("slope fit input contains non-finite values"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx <= 1e-300 {
        return Err(Error::domain("degenerate x values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - slope * a - intercept).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
    })
}
