use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use srlc_cli::commands::{self, EvalMode};
use srlc_cli::config::ExperimentConfig;
use srlc_cli::verify;
use srlc_core::Error;

/// Structured observer-feedback-feedforward RL control workbench.
#[derive(Parser)]
#[command(name = "srlc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per seed from an experiment config.
    Train {
        /// Experiment config file (sectioned key=value).
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seed list override.
        #[arg(long)]
        seeds: Option<String>,
        /// Total environment steps override.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Evaluate trained checkpoints on constant reference levels.
    Eval {
        /// Run directory produced by `train`.
        #[arg(long)]
        run: PathBuf,
        /// Specific checkpoint (defaults to every seed's final one).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// track: normal evaluation; ablate: zero the measured disturbance
        /// fed to the policy while the plant still experiences it.
        #[arg(long, default_value = "track")]
        mode: String,
        /// Number of evenly spaced reference levels.
        #[arg(long, default_value_t = 5)]
        levels: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regress the observer state against the true plant state.
    Statefit {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of reference levels to collect pairs over.
        #[arg(long, default_value_t = 100)]
        levels: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the numerical verification suite.
    Verify,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_)
        | Error::UnknownParam(_)
        | Error::DuplicateParam(_)
        | Error::Checkpoint(_)
        | Error::ShapeMismatch { .. } => 2,
        _ => 3,
    }
}

fn init_thread_pool() {
    #[cfg(feature = "parallel")]
    {
        if let Ok(v) = std::env::var("SRLC_THREADS") {
            if let Ok(n) = v.parse::<usize>() {
                if n == 1 {
                    srlc_core::par::set_sequential(true);
                } else {
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                }
            }
        }
    }
}

fn run() -> Result<u8, Error> {
    let cli = Cli::parse();
    init_thread_pool();
    match cli.command {
        Command::Train { config, out, seeds, steps } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|_| Error::Config(format!("cannot read config `{}`", config.display())))?;
            let mut cfg = ExperimentConfig::parse(&text)?;
            if let Some(list) = seeds {
                cfg.run.seeds = list
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<u64>()
                            .map_err(|_| Error::Config(format!("bad seed `{s}` in --seeds")))
                    })
                    .collect::<Result<_, _>>()?;
                if cfg.run.seeds.is_empty() {
                    return Err(Error::Config("--seeds list is empty".into()));
                }
            }
            if let Some(n) = steps {
                cfg.run.total_steps = n;
            }
            cfg.validate()?;
            let outcome = commands::cmd_train(&cfg, out.as_deref())?;
            println!("run directory: {}", outcome.run_dir.display());
            for (seed, path) in &outcome.per_seed {
                println!("seed {seed}: final checkpoint {}", path.display());
            }
            Ok(0)
        }
        Command::Eval { run, checkpoint, mode, levels, out } => {
            let mode = EvalMode::parse(&mode)?;
            let report = commands::cmd_eval(&run, checkpoint.as_deref(), mode, levels, out.as_deref())?;
            for (seed, rms) in report.rms_by_seed() {
                println!("seed {seed}: mean RMS tracking error {rms:.6}");
            }
            Ok(0)
        }
        Command::Statefit { run, checkpoint, levels, out } => {
            let fit = commands::cmd_statefit(&run, checkpoint.as_deref(), levels, out.as_deref())?;
            for (j, r2) in fit.r_squared.iter().enumerate() {
                println!("true state {j}: R^2 = {r2:.4}");
            }
            println!("mean R^2 = {:.4} over {} samples", fit.mean_r_squared(), fit.sample_count);
            Ok(0)
        }
        Command::Verify => {
            let (results, all_pass) = verify::run_verify();
            verify::print_report(&results);
            Ok(if all_pass { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
