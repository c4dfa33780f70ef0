use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ipp3d::{emit_plot_data, inspect_map, run_eval, run_train, ConfigFile, HarnessError, Planner, Result};

#[derive(Debug, Parser)]
#[command(name = "ipp3d", version, about = "Adaptive 3D informative path planning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the attention policy with PPO.
    Train(TrainArgs),
    /// Evaluate one planner over seeded trials.
    Eval(EvalArgs),
    /// Turn metric CSVs into per-planner mean/std series.
    Plot(PlotArgs),
    /// Print a generated field and its roadmap.
    InspectMap(InspectArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// TOML config; the `[train]` table is used.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint to continue from.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Directory for checkpoints and the training log.
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long)]
    map_size: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// TOML config; the `[eval]` table is used.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Base seed of the trials.
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    planner: Option<Planner>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    map_size: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Write zeros instead of measured decision times.
    #[arg(long)]
    no_runtime: bool,
    /// Output directory for the metric and summary CSVs.
    #[arg(short, long, default_value = "results")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Metric CSVs written by `eval`.
    #[arg(required = true)]
    csvs: Vec<PathBuf>,
    #[arg(short, long, default_value = "plots")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Field seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    map_size: Option<usize>,
}

fn load(path: &Option<PathBuf>) -> Result<ConfigFile> {
    path.as_deref().map_or_else(|| Ok(ConfigFile::default()), ConfigFile::load)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            let mut cfg = load(&a.config)?.train;
            cfg.episodes = a.episodes.unwrap_or(cfg.episodes);
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            cfg.map_size = a.map_size.unwrap_or(cfg.map_size);
            cfg.resume = a.resume.or(cfg.resume);
            cfg.checkpoint_dir = a.out.unwrap_or(cfg.checkpoint_dir);
            let out = run_train(&cfg)?;
            let last = out.log.last().map_or(f64::NAN, |r| r.mean_return);
            println!("trained to episode {} (last return {last:.3})", cfg.episodes);
            for p in &out.checkpoints {
                println!("checkpoint {}", p.display());
            }
        }
        Command::Eval(a) => {
            let mut cfg = load(&a.config)?.eval;
            cfg.seed_base = a.seed;
            cfg.planner = a.planner.unwrap_or(cfg.planner);
            cfg.trials = a.trials.unwrap_or(cfg.trials);
            if let Some(b) = a.budget {
                cfg.budget = b;
                cfg.eval_times.retain(|&t| t < b);
                cfg.eval_times.push(b);
            }
            cfg.map_size = a.map_size.unwrap_or(cfg.map_size);
            cfg.workers = a.workers.unwrap_or(cfg.workers);
            cfg.checkpoint = a.checkpoint.or(cfg.checkpoint);
            cfg.record_runtime &= !a.no_runtime;
            let report = run_eval(&cfg)?;
            let [metrics, summary] = report.write(&a.out, cfg.planner)?;
            for s in &report.summary {
                println!(
                    "{:>8} t={:>6.1}s  uncertainty -{:.2}% (±{:.2})  rmse -{:.2}% (±{:.2})  {:.4}s/decision",
                    s.planner.name(),
                    s.time_s,
                    s.uncertainty_mean,
                    s.uncertainty_std,
                    s.rmse_mean,
                    s.rmse_std,
                    s.runtime_mean
                );
            }
            println!("wrote {} and {}", metrics.display(), summary.display());
        }
        Command::Plot(a) => {
            for p in emit_plot_data(&a.csvs, &a.out)? {
                println!("wrote {}", p.display());
            }
        }
        Command::InspectMap(a) => {
            let mut cfg = load(&a.config)?.eval;
            cfg.map_size = a.map_size.unwrap_or(cfg.map_size);
            print!("{}", inspect_map(&cfg, a.seed)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &HarnessError) -> ExitCode {
    ExitCode::from(e.exit_code() as u8)
}
