use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mobcount::cli::{self, PipelineConfig, StepReport};
use mobcount::dedup::DedupMethod;
use mobcount::inference::PopDistr;
use mobcount::Error;

#[derive(Parser)]
#[command(name = "mobcount", version, about = "Population counts from mobile network event data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario
    Simulate,
    /// Fit per-device HMMs and write posterior location files
    Geolocate,
    /// Compute device duplicity probabilities
    Dedup,
    /// Draw detected counts and flows
    Aggregate,
    /// Estimate target-population distributions
    Infer,
    /// Run every layer
    Pipeline,
}

#[derive(Args)]
struct Opts {
    /// TOML configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Always recompute
    #[arg(long, global = true)]
    no_cache: bool,
    /// Deduplication method: 1to1, pairs or trajectory
    #[arg(long, global = true)]
    method: Option<DedupMethod>,
    /// Population distribution: BetaNegBin, NegBin or STNegBin
    #[arg(long, global = true)]
    pop_distr: Option<PopDistr>,
    #[arg(long, global = true)]
    retrain: Option<usize>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    prior: Option<f64>,
    /// Number of Monte-Carlo draws
    #[arg(long, global = true)]
    draws: Option<u32>,
}

fn load(opts: &Opts) -> mobcount::Result<PipelineConfig> {
    let mut cfg = match &opts.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = &opts.output_dir {
        cfg.output_dir = v.clone();
    }
    if let Some(v) = opts.seed {
        cfg.seed = v;
    }
    if let Some(v) = opts.workers {
        cfg.workers = v;
    }
    if let Some(v) = &opts.cache_dir {
        cfg.cache_dir = v.clone();
    }
    cfg.no_cache |= opts.no_cache;
    if let Some(v) = opts.method {
        cfg.dedup.method = v;
    }
    if let Some(v) = opts.pop_distr {
        cfg.inference.model.pop_distr = v;
    }
    if let Some(v) = opts.retrain {
        cfg.geolocation.model.retrain = v;
    }
    if opts.lambda.is_some() {
        cfg.dedup.lambda = opts.lambda;
    }
    if let Some(v) = opts.prior {
        cfg.dedup.prior = v;
    }
    if let Some(v) = opts.draws {
        cfg.aggregation.n_draws = v;
    }
    cfg.propagate();
    cfg.validate()?;
    Ok(cfg)
}

fn print_step(step: &StepReport) {
    println!(
        "{}: {} in {:.3}s -> {}",
        step.name,
        if step.cache_hit { "cached" } else { "computed" },
        step.elapsed.as_secs_f64(),
        step.output_dir.display()
    );
}

fn run(cli: &Cli) -> mobcount::Result<()> {
    let cfg = load(&cli.opts)?;
    match cli.command {
        Command::Simulate => print_step(&cli::cmd_simulate(&cfg)?),
        Command::Geolocate => print_step(&cli::cmd_geolocate(&cfg)?),
        Command::Dedup => print_step(&cli::cmd_dedup(&cfg)?),
        Command::Aggregate => print_step(&cli::cmd_aggregate(&cfg)?),
        Command::Infer => print_step(&cli::cmd_infer(&cfg)?),
        Command::Pipeline => print!("{}", cli::cmd_pipeline(&cfg)?.summary()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}
