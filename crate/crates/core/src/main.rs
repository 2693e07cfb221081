use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hiermaml::harness::{
    cmd_eval, cmd_gen_data, cmd_pretrain, cmd_report, cmd_sweep, cmd_train, grad_check_suite, EvalSplit,
    ExperimentConfig, Method, SweepAxis, GRAD_CHECK_TOLERANCE,
};
use hiermaml::{Error, Result};

/// Task-adaptive meta-learning experiments.
#[derive(Parser)]
#[command(name = "hiermaml", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Method name, e.g. adaptive-maml-b; overrides the config.
    #[arg(long)]
    method: Option<Method>,
    /// Worker threads; 1 gives single-worker execution.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset as CSV + descriptor into <out>/data.
    GenData(Common),
    /// Fit the pretrained model on the pretraining set.
    Pretrain(Common),
    /// Train the configured method from the pretrained model.
    Train(Common),
    /// Score a trained artifact and write report CSVs.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Artifact file; defaults to the method's artifact in <out>.
        artifact: Option<PathBuf>,
        /// Score the train tasks instead of the test tasks.
        #[arg(long)]
        on_train: bool,
    },
    /// Train and evaluate every method (or --method) and write table.csv.
    Report(Common),
    /// Train and evaluate once per value of a sensitivity axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// inner_epochs, max_splits or adaptation_steps.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values in [1, 8].
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
    /// Compare analytic and finite-difference gradients on random models.
    GradCheck {
        #[arg(long, default_value_t = 20)]
        configs: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn init_workers(workers: Option<usize>) -> Result<()> {
    if let Some(n) = workers {
        if n == 0 {
            return Err(Error::config("workers", "must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config("workers", e.to_string()))?;
    }
    Ok(())
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    init_workers(common.workers)?;
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(method) = common.method {
        cfg.method = method;
    }
    Ok(cfg.resolved())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => {
            let dir = cmd_gen_data(&load(&c)?)?;
            println!("wrote {}", dir.display());
        }
        Command::Pretrain(c) => {
            let cfg = load(&c)?;
            let out = cmd_pretrain(&cfg)?;
            println!("held-out R² {}", out.heldout_r2);
            println!("wrote {}", cfg.pretrained_path().display());
        }
        Command::Train(c) => {
            let cfg = load(&c)?;
            let (outcome, path) = cmd_train(&cfg)?;
            if let Some(e) = outcome.selected_epoch {
                println!("selected epoch {e}");
            }
            println!("wrote {}", path.display());
        }
        Command::Eval {
            common,
            artifact,
            on_train,
        } => {
            let cfg = load(&common)?;
            let split = if on_train { EvalSplit::Train } else { EvalSplit::Test };
            let report = cmd_eval(&cfg, artifact.as_deref(), split)?;
            for a in &report.aggregates {
                println!("{:<10} R² {:.4}  MSE {:.6}", a.subset, a.r2, a.mse);
            }
        }
        Command::Report(c) => {
            let cfg = load(&c)?;
            let methods = match c.method {
                Some(m) => vec![m],
                None => Method::ALL.to_vec(),
            };
            println!("{:<16} {:>8} {:>8} {:>8}", "method", "whole", "low", "high");
            for r in cmd_report(&cfg, &methods)? {
                println!(
                    "{:<16} {:>8.4} {:>8.4} {:>8.4}",
                    r.method.to_string(),
                    r.r2("whole"),
                    r.r2("low"),
                    r.r2("high")
                );
            }
        }
        Command::Sweep { common, axis, values } => {
            let cfg = load(&common)?;
            for row in cmd_sweep(&cfg, axis, &values)? {
                match row.scores {
                    Some((w, l, h)) => println!("{} = {}: whole {w:.4} low {l:.4} high {h:.4}", axis.name(), row.value),
                    None => println!("{} = {}: NA", axis.name(), row.value),
                }
            }
        }
        Command::GradCheck { configs, seed, workers } => {
            init_workers(workers)?;
            let cases = grad_check_suite(configs, seed)?;
            let mut worst: f64 = 0.0;
            let mut beyond = 0;
            for c in &cases {
                println!(
                    "H={} T={} F={} params={} max rel err {:.3e} flagged {} beyond rounding {}",
                    c.hidden, c.seq_len, c.n_features, c.n_params, c.max_relative_error, c.flagged, c.beyond_rounding
                );
                worst = worst.max(c.max_relative_error);
                beyond += c.beyond_rounding;
            }
            println!("max relative error {worst:.3e} (tolerance {GRAD_CHECK_TOLERANCE:e})");
            if beyond > 0 {
                return Err(Error::Divergence {
                    step: 0,
                    detail: format!("{beyond} gradient entries disagree beyond finite-difference rounding"),
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HIERMAML_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Divergence { .. }) {
                eprintln!("see the log above; rerun with HIERMAML_LOG=debug for per-layer detail");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
