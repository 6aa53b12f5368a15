//! Acceptance criteria. Each test writes one `PASS`/`FAIL` line to stdout
//! (bypassing the test harness capture) and then asserts.

use std::io::Write;

use ksmem::experiments::*;
use ksmem::field::{evaluate_h_direct, FieldGrid, GridDomain, HistoryBuffer};
use ksmem::metrics::{w1_1d, w2_1d, wp_assignment, EmpiricalMeasure};
use ksmem::model::{InitialField, Model};
use ksmem::simulate::{run_particle_system, stability_ratio, EulerConfig};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn report(criterion: u32, title: &str, passed: bool, detail: &str) {
    let line = format!(
        "{} criterion {criterion} ({title}): {detail}\n",
        if passed { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

fn verdict_line(out: &ExperimentOutcome) -> String {
    out.verdicts
        .iter()
        .map(|v| format!("{} {:?} [{}]", v.name, v.status, v.detail))
        .collect::<Vec<_>>()
        .join("; ")
}

fn field_bounds_ok(out: &ExperimentOutcome) -> bool {
    out.verdicts
        .iter()
        .filter(|v| v.name == "field_bounds")
        .all(Verdict::passed)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Largest `|f|` on a fine uniform grid over `[-20, 20]`.
fn scan_sup(f: impl Fn(f64) -> f64) -> f64 {
    let n = 4_000_000;
    (0..=n)
        .map(|k| f(-20.0 + 40.0 * k as f64 / n as f64).abs())
        .fold(0.0, f64::max)
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    assert!(f(lo) * f(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(lo) * f(mid) <= 0.0 {
            hi = mid
        } else {
            lo = mid
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn criterion_01_constants() {
    let t0 = std::time::Instant::now();
    let c = Model::default_instance().constants().unwrap();
    let engine_time = t0.elapsed().as_secs_f64();
    let (alpha, beta, chi, d, delta, v_star) = (1.0, 1.0, 1.0, 1.0, 1.0f64, 1.0);
    let g = |x: f64| (-x * x / (2.0 * delta)).exp() / (2.0 * std::f64::consts::PI * delta).sqrt();
    let hess_g = scan_sup(|x| g(x) * (x * x / (delta * delta) - 1.0 / delta));
    let grad_g = scan_sup(|x| -x / delta * g(x));
    let lambda = 2.0 * beta * hess_g / alpha * chi * d;
    let lt = v_star - d * hess_g * chi * beta / alpha;
    let c2t = d * hess_g * chi * beta;
    let c3t = 2.0 * grad_g * chi * beta / alpha;
    let poly = |r: f64| r * r - (lt - alpha) * r - c2t;
    let r1 = bisect(poly, 0.0, 10.0);
    let r2 = bisect(poly, -10.0, 0.0);
    let bound = c3t / (r1 - r2) * (1.0 + alpha / (lt - r1));
    let got = c.poc_bound_const.unwrap();
    let errs = [
        rel(c.lambda_threshold, lambda),
        rel(c.lambda_tilde, lt),
        rel(c.r1, r1),
        rel(c.r2, r2),
        rel(got, bound),
    ];
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    let published = [
        (lambda, 0.7978846),
        (lt, 0.6010577),
        (r1, 0.4628968),
        (r2, -0.8618391),
    ];
    let published_ok =
        published.iter().all(|&(a, b)| (a - b).abs() < 5e-7) && (bound - 3.01).abs() < 5e-3;
    let detail = format!(
        "lambda {:.7}, lambda_tilde {:.7}, r1 {:.7}, r2 {:.7}, C {:.4}; max rel err vs oracle {worst:.1e}; {engine_time:.4}s",
        c.lambda_threshold, c.lambda_tilde, c.r1, c.r2, got
    );
    let ok = worst <= 1e-6 && published_ok && engine_time < 1.0;
    report(1, "constants engine", ok, &detail);
    assert!(ok);
}

#[test]
fn criterion_02_evaluator_equivalence() {
    let mut rng = StdRng::seed_from_u64(20240611);
    let domain = GridDomain::new(12.0, 2048).unwrap();
    let eps = 0.01;
    let steps = 200;
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let mut model = Model::default_instance();
        if case % 2 == 1 {
            model.h0 = InitialField::GaussianBump {
                amplitude: rng.random_range(0.2..1.0),
                variance: rng.random_range(0.5..2.0),
            };
        }
        let n = rng.random_range(1..=8);
        let mut grid = FieldGrid::new(&model, domain, eps, steps as f64 * eps).unwrap();
        let mut hist = HistoryBuffer::new(eps, 1, n);
        let mut pos: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        for _ in 0..steps {
            for x in &mut pos {
                *x = (*x + 0.1 * rng.random_range(-1.0..1.0f64)).clamp(-1.5, 1.5);
            }
            grid.advance(&pos).unwrap();
            hist.push(&pos, model.params.alpha).unwrap();
        }
        let h = grid.h_values();
        let grad = grid.gradient();
        for j in (0..domain.n_points).step_by(3) {
            let x = domain.node(j);
            if x.abs() > grid.safe_half_width() {
                continue;
            }
            let (hd, gd) =
                evaluate_h_direct(&hist, &model.h0, &model.params, &model.kernel, &[x]).unwrap();
            worst = worst
                .max((h[j] - hd).abs())
                .max((grad.values[j] - gd[0]).abs());
        }
        for _ in 0..10 {
            let x = rng.random_range(-grid.safe_half_width()..grid.safe_half_width());
            let (_, gd) =
                evaluate_h_direct(&hist, &model.h0, &model.params, &model.kernel, &[x]).unwrap();
            worst = worst.max((grad.interpolate(x).unwrap() - gd[0]).abs());
        }
    }
    let ok = worst <= 5e-3;
    report(
        2,
        "evaluator equivalence",
        ok,
        &format!("sup error {worst:.2e} over 20 histories (tolerance 5e-3)"),
    );
    assert!(ok);
}

#[test]
fn criterion_03_poc_finite_rate() {
    let mut sc = ScenarioConfig::default_instance();
    sc.sweep.n_values = Some(vec![32, 64, 128, 256]);
    sc.sweep.n_ref = Some(4096);
    sc.sweep.replications = Some(16);
    sc.run.epsilon = Some(0.01);
    sc.run.horizon = Some(5.0);
    let out = exp_poc_finite(&sc).unwrap();
    let ok = out.passed() && out.verdicts[0].status == Status::Pass;
    report(3, "finite-horizon POC rate", ok, &verdict_line(&out));
    assert!(ok);
}

#[test]
fn criterion_04_uniform_poc() {
    let mut sc = ScenarioConfig::default_instance();
    sc.sweep.n_values = Some(vec![128]);
    sc.sweep.replications = Some(32);
    sc.run.epsilon = Some(0.01);
    sc.run.horizon = Some(20.0);
    let out = exp_poc_uniform(&sc).unwrap();
    let ok = out.passed() && out.verdicts.iter().all(|v| v.status == Status::Pass);
    report(4, "uniform-in-time POC", ok, &verdict_line(&out));
    assert!(ok);
}

#[test]
fn criterion_05_euler_rate() {
    let mut sc = ScenarioConfig::default_instance();
    sc.sweep.epsilon_values = Some(vec![0.04, 0.02, 0.01, 0.005]);
    sc.sweep.refinement = Some(4);
    sc.sweep.replications = Some(16);
    sc.run.n_particles = Some(64);
    sc.run.horizon = Some(4.0);
    let out = exp_euler_rate(&sc).unwrap();
    let ok = out.passed();
    report(5, "Euler strong rate", ok, &verdict_line(&out));
    assert!(field_bounds_ok(&out));
    assert!(ok, "{}", verdict_line(&out));
}

#[test]
fn criterion_06_concentration() {
    let mut sc = ScenarioConfig::default_instance();
    sc.sweep.n_values = Some(vec![10, 20, 40]);
    sc.sweep.tail_epsilons = Some(vec![0.15, 0.2, 0.25]);
    sc.sweep.replications = Some(200);
    let out = exp_concentration(&sc).unwrap();
    let ok = out.passed() && out.verdicts.iter().all(|v| v.status == Status::Pass);
    report(6, "concentration form", ok, &verdict_line(&out));
    assert!(ok);
}

#[test]
fn criterion_07_field_bounds() {
    let mut sc = ScenarioConfig::default_instance();
    sc.run.horizon = Some(10.0);
    let out = exp_field_bounds(&sc).unwrap();
    let max_grad = out.summary["monitors"]["max_gradient"].as_f64().unwrap();
    let mut ok = out.passed() && max_grad <= 0.2419707 + 1e-3;
    let mut detail = format!("default T = 10: max |grad h| {max_grad:.6} <= 0.2419707 + 1e-3");

    sc.h0 = FieldSpec::GaussianBump {
        amplitude: 1.0,
        variance: 1.0,
    };
    sc.run.horizon = Some(2.0);
    let bump = exp_field_bounds(&sc).unwrap();
    ok &= bump.passed();
    detail += &format!("; bump h0: {}", verdict_line(&bump));
    report(7, "field-bound monitors", ok, &detail);
    assert!(ok);
}

#[test]
fn criterion_08_metrics_oracles() {
    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for k in 0..n {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }
    let mut rng = StdRng::seed_from_u64(8);
    let mut worst_brute: f64 = 0.0;
    let mut worst_quantile: f64 = 0.0;
    let mut axioms = true;
    for case in 0..200 {
        let m = 1 + case % 8;
        let d = 1 + case % 3;
        let pts = |rng: &mut StdRng| {
            (0..m * d)
                .map(|_| rng.random_range(-2.0..2.0))
                .collect::<Vec<f64>>()
        };
        let (a, b, c) = (pts(&mut rng), pts(&mut rng), pts(&mut rng));
        let (mu, nu, rho) = (
            EmpiricalMeasure::new(a.clone(), d).unwrap(),
            EmpiricalMeasure::new(b.clone(), d).unwrap(),
            EmpiricalMeasure::new(c, d).unwrap(),
        );
        for p in [1u32, 2] {
            let cost = |i: usize, j: usize| -> f64 {
                (0..d)
                    .map(|k| (a[i * d + k] - b[j * d + k]).powi(2))
                    .sum::<f64>()
                    .sqrt()
                    .powi(p as i32)
            };
            let brute = permutations(m)
                .iter()
                .map(|s| s.iter().enumerate().map(|(i, &j)| cost(i, j)).sum::<f64>() / m as f64)
                .fold(f64::INFINITY, f64::min)
                .powf(1.0 / p as f64);
            let got = wp_assignment(&mu, &nu, p).unwrap().value;
            worst_brute = worst_brute.max((got - brute).abs() / brute.max(1.0));
        }
        let w =
            |x: &EmpiricalMeasure, y: &EmpiricalMeasure, p| wp_assignment(x, y, p).unwrap().value;
        let (w1, w2) = (w(&mu, &nu, 1), w(&mu, &nu, 2));
        axioms &= w1 <= w2 + 1e-12;
        axioms &= w(&mu, &mu, 1) <= 1e-12 && (w1 - w(&nu, &mu, 1)).abs() <= 1e-12;
        axioms &= w1 <= w(&mu, &rho, 1) + w(&rho, &nu, 1) + 1e-12;
        if d == 1 {
            worst_quantile = worst_quantile.max((w1_1d(&mu, &nu).unwrap().value - w1).abs());
            worst_quantile = worst_quantile.max((w2_1d(&mu, &nu).unwrap().value - w2).abs());
        }
    }
    let ok = worst_brute <= 1e-12 && worst_quantile <= 1e-12 && axioms;
    let detail = format!(
        "assignment vs brute force {worst_brute:.1e}; quantile vs assignment {worst_quantile:.1e}; axioms {}",
        if axioms { "hold" } else { "violated" }
    );
    report(8, "metrics oracles", ok, &detail);
    assert!(ok);
}

#[test]
fn criterion_09_stability() {
    let model = Model::default_instance();
    let eps0 = model.epsilon0();
    let mut worst: f64 = 0.0;
    let mut monitors_ok = true;
    for eps in [eps0, 0.02] {
        for seed in 0..8u64 {
            let cfg = EulerConfig::new(eps, (20.0 / eps).round() as usize, 64, 1000 + seed);
            let rec = run_particle_system(&cfg, &model).unwrap();
            let m2: Vec<f64> = rec.moments.iter().map(|r| r.m2).collect();
            worst = worst.max(stability_ratio(&m2).unwrap());
            monitors_ok &= rec.monitors.violations() == 0;
        }
    }
    let ok = worst <= 2.0 && monitors_ok;
    report(
        9,
        "second-moment stability",
        ok,
        &format!("worst quartile ratio {worst:.4} over 8 seeds at eps {eps0} and 0.02 (max 2)"),
    );
    assert!(ok);
}

fn rendered(out: &ExperimentOutcome) -> Vec<(String, String)> {
    out.tables
        .iter()
        .map(|(n, t)| (n.clone(), t.render()))
        .collect()
}

#[test]
fn criterion_10_determinism() {
    let mut poc = ScenarioConfig::default_instance();
    poc.run.epsilon = Some(0.05);
    poc.run.horizon = Some(1.0);
    poc.sweep.n_values = Some(vec![8, 16, 32]);
    poc.sweep.n_ref = Some(128);
    poc.sweep.replications = Some(8);

    let mut conc = poc.clone();
    conc.sweep.n_values = Some(vec![5, 10, 20]);
    conc.sweep.replications = Some(30);
    conc.sweep.n_ref = Some(256);
    conc.sweep.fixed_time = Some(0.5);

    let mut euler = ScenarioConfig::default_instance();
    euler.sweep.epsilon_values = Some(vec![0.1, 0.05, 0.025]);
    euler.sweep.refinement = Some(2);
    euler.sweep.replications = Some(8);
    euler.run.n_particles = Some(8);
    euler.run.horizon = Some(0.8);

    let mut sim = ScenarioConfig::default_instance();
    sim.run.epsilon = Some(0.05);
    sim.run.horizon = Some(1.0);
    sim.run.n_particles = Some(16);
    sim.run.snapshot_steps = vec![0, 10, 20];

    let cases = [
        (Experiment::PocFinite, &poc),
        (Experiment::Concentration, &conc),
        (Experiment::EulerRate, &euler),
        (Experiment::Simulate, &sim),
    ];
    let mut ok = true;
    let mut files = 0;
    for (exp, sc) in cases {
        let runs: Vec<Vec<(String, String)>> = [1, 4, 8]
            .iter()
            .map(|&k| {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build()
                    .unwrap();
                rendered(&pool.install(|| run_experiment(exp, sc)).unwrap())
            })
            .collect();
        ok &= runs[0] == runs[1] && runs[0] == runs[2];
        files += runs[0].len();
    }
    report(
        10,
        "determinism",
        ok,
        &format!("{files} CSV outputs of 4 experiments byte-identical across 1, 4 and 8 workers"),
    );
    assert!(ok);
}
