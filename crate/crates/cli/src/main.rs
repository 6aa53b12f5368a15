//! `ksmem`: run the Keller–Segel particle experiments from a TOML scenario.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use ksmem::experiments::{
    run_experiment, unix_now, write_outputs, Experiment, ScenarioConfig, Status,
};
use ksmem::metrics::{wasserstein, EmpiricalMeasure};

const THREADS_ENV: &str = "KSMEM_THREADS";

#[derive(Parser)]
#[command(
    name = "ksmem",
    version,
    about = "Keller–Segel particle system with memory: simulation and verification"
)]
struct Cli {
    /// Worker threads; overrides the KSMEM_THREADS environment variable.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the theoretical constants and the convexity report as JSON.
    Constants(Common),
    /// Simulate one particle system and write trajectory, moments and field snapshots.
    Simulate(Common),
    /// Finite-horizon propagation of chaos: deviation against N.
    PocFinite(Common),
    /// Uniform-in-time propagation of chaos: plateau and bound checks.
    PocUniform(Common),
    /// Strong convergence rate of the Euler scheme in the step size.
    EulerRate(Common),
    /// Tail probabilities of the Wasserstein distance to the mean-field law.
    Concentration(Common),
    /// Online checks of the field gradient and Lipschitz bounds.
    FieldBounds(Common),
    /// Wasserstein distance between two point clouds (CSV, one point per row), as a JSON row.
    Distance {
        mu: PathBuf,
        nu: PathBuf,
        /// Order of the distance (1 or 2).
        #[arg(long, default_value_t = 1)]
        p: u32,
    },
    /// Re-run the experiment recorded in a manifest.json.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML) or a previous manifest.json; the default instance if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: results/<experiment>).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e
                .downcast_ref::<ksmem::Error>()
                .is_none_or(ksmem::Error::is_configuration);
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}

fn thread_count(flag: Option<usize>) -> anyhow::Result<usize> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("{THREADS_ENV}={v} is not a thread count")),
        Err(_) => Ok(0),
    }
}

fn load(common: &Common, experiment: Experiment) -> anyhow::Result<ScenarioConfig> {
    let mut sc = match &common.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default_instance(),
    };
    if let Some(recorded) = sc.experiment {
        if recorded != experiment {
            bail!(ksmem::Error::Config(format!(
                "the config is for `{}`, not `{}`",
                recorded.name(),
                experiment.name()
            )));
        }
    }
    sc.experiment = Some(experiment);
    if let Some(seed) = common.seed {
        sc.seed = seed;
    }
    Ok(sc)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let threads = thread_count(cli.threads)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()?;

    let (experiment, sc, out) = match cli.command {
        Command::Distance { mu, nu, p } => {
            let read = |path: &Path| -> anyhow::Result<EmpiricalMeasure> {
                let file = std::fs::File::open(path).map_err(|e| {
                    ksmem::Error::Config(format!("cannot read {}: {e}", path.display()))
                })?;
                Ok(EmpiricalMeasure::read_csv(std::io::BufReader::new(file))?)
            };
            let report = wasserstein(&read(&mu)?, &read(&nu)?, p)?;
            println!("{}", serde_json::to_string(&report)?);
            return Ok(true);
        }
        Command::Replay { manifest, out } => {
            let sc = ScenarioConfig::load(&manifest)?;
            let Some(exp) = sc.experiment else {
                bail!(ksmem::Error::Config(format!(
                    "{} records no experiment",
                    manifest.display()
                )));
            };
            (exp, sc, Some(out))
        }
        Command::Constants(c) => (
            Experiment::Constants,
            load(&c, Experiment::Constants)?,
            c.out,
        ),
        Command::Simulate(c) => (Experiment::Simulate, load(&c, Experiment::Simulate)?, c.out),
        Command::PocFinite(c) => (
            Experiment::PocFinite,
            load(&c, Experiment::PocFinite)?,
            c.out,
        ),
        Command::PocUniform(c) => (
            Experiment::PocUniform,
            load(&c, Experiment::PocUniform)?,
            c.out,
        ),
        Command::EulerRate(c) => (
            Experiment::EulerRate,
            load(&c, Experiment::EulerRate)?,
            c.out,
        ),
        Command::Concentration(c) => (
            Experiment::Concentration,
            load(&c, Experiment::Concentration)?,
            c.out,
        ),
        Command::FieldBounds(c) => (
            Experiment::FieldBounds,
            load(&c, Experiment::FieldBounds)?,
            c.out,
        ),
    };

    let started = unix_now();
    log::info!("running {} with seed {}", experiment.name(), sc.seed);
    let outcome = run_experiment(experiment, &sc)?;
    if experiment == Experiment::Constants {
        println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
        if let Some(dir) = out {
            write_outputs(&dir, &sc, &outcome, started, rayon::current_num_threads())?;
        }
        return Ok(true);
    }
    let dir = out.unwrap_or_else(|| Path::new("results").join(experiment.name()));
    write_outputs(&dir, &sc, &outcome, started, rayon::current_num_threads())?;
    for v in &outcome.verdicts {
        let tag = match v.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
        };
        println!("{tag} {}: {}", v.name, v.detail);
    }
    println!("wrote {}", dir.display());
    Ok(outcome.passed())
}
