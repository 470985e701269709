use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use combine_core::dynamics::{dynamics_table, write_dynamics_csv, DynamicsParams};
use combine_core::experiment::{emit_outputs, run_experiment, sweep, write_sweep, EnvironmentSpec, ExperimentSpec};
use combine_core::rng::seeded;

#[derive(Parser)]
#[command(name = "combine", version, about = "Referee-arbitrated bandit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation spec and write regret curves and summaries.
    Simulate(RunArgs),
    /// Replay a labeled stream spec.
    Replay(RunArgs),
    /// Run a spec once per value of its [sweep] grid.
    Sweep(RunArgs),
    /// Compare the referee ODE with Monte-Carlo runs of the referee.
    Dynamics(DynamicsArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Comma-separated seeds overriding the spec.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct DynamicsArgs {
    /// TOML file with delta_r, r_star, gap, p0 and optionally horizon, replications, seed.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    delta_r: Option<f64>,
    #[arg(long)]
    r_star: Option<f64>,
    #[arg(long)]
    gap: Option<f64>,
    #[arg(long)]
    p0: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    replications: Option<usize>,
    /// Only the first seed is used.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DynamicsFile {
    delta_r: Option<f64>,
    r_star: Option<f64>,
    gap: Option<f64>,
    p0: Option<f64>,
    horizon: Option<usize>,
    replications: Option<usize>,
    seed: Option<u64>,
}

fn load_spec(args: &RunArgs) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::from_file(&args.spec).with_context(|| format!("reading {}", args.spec.display()))?;
    if let Some(seeds) = &args.seeds {
        spec.seeds = seeds.clone();
    }
    spec.validate().with_context(|| format!("invalid spec {}", args.spec.display()))?;
    Ok(spec)
}

fn run(args: &RunArgs, want_stream: bool) -> Result<()> {
    let spec = load_spec(args)?;
    let is_stream = matches!(spec.environment, EnvironmentSpec::StreamReplay(_));
    if is_stream != want_stream {
        bail!(
            "{} describes a {} environment; use `combine {}`",
            args.spec.display(),
            if is_stream { "stream_replay" } else { "simulation" },
            if is_stream { "replay" } else { "simulate" }
        );
    }
    let traces = run_experiment(&spec, args.workers)?;
    let files = emit_outputs(&traces, &spec.output, &args.out)?;
    report(&files);
    Ok(())
}

fn run_sweep(args: &RunArgs) -> Result<()> {
    let spec = load_spec(args)?;
    if spec.sweep.is_none() {
        bail!("{} has no [sweep] section", args.spec.display());
    }
    let rows = sweep(&spec, args.workers)?;
    report(&[write_sweep(&rows, &args.out)?]);
    Ok(())
}

fn run_dynamics(args: &DynamicsArgs) -> Result<()> {
    let file = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => DynamicsFile::default(),
    };
    let params = DynamicsParams {
        delta_r: args.delta_r.or(file.delta_r).unwrap_or(0.05),
        r_star: args.r_star.or(file.r_star).unwrap_or(1.0),
        gap: args.gap.or(file.gap).unwrap_or(0.5),
        p0: args.p0.or(file.p0).unwrap_or(0.5),
    };
    let horizon = args.horizon.or(file.horizon).unwrap_or(2000);
    let replications = args.replications.or(file.replications).unwrap_or(2000);
    let seed = args
        .seeds
        .as_ref()
        .and_then(|s| s.first().copied())
        .or(file.seed)
        .unwrap_or(0);
    let pool = rayon_pool(args.workers)?;
    let rows = pool.install(|| dynamics_table(&params, horizon, replications, &mut seeded(seed)))?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let path = args.out.join("dynamics.csv");
    let out = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_dynamics_csv(&rows, out).with_context(|| format!("writing {}", path.display()))?;
    let max_gap = rows
        .iter()
        .map(|r| (r.p_theory - r.p_empirical).abs())
        .fold(0.0, f64::max);
    eprintln!("max |theory - simulation| = {max_gap:.4}");
    report(&[path]);
    Ok(())
}

fn rayon_pool(workers: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

fn report(files: &[PathBuf]) {
    for f in files {
        println!("{}", f.display());
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => run(args, false),
        Command::Replay(args) => run(args, true),
        Command::Sweep(args) => run_sweep(args),
        Command::Dynamics(args) => run_dynamics(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
