//! `gradsup`: generate benchmarks, train with or without gradient
//! supervision, evaluate checkpoints and draw decision boundaries.

mod commands;
mod data_dir;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Errors that are the caller's fault; they exit with status 2 like clap's own.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "gradsup", version, about = "Gradient supervision from counterfactual pairs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic benchmark as JSONL splits plus manifest.json
    Gen {
        #[command(subcommand)]
        kind: GenKind,
    },
    /// Train one model and write its checkpoint and per-epoch history
    Train(commands::TrainArgs),
    /// Evaluate one checkpoint, or several as a mean-logit ensemble
    Eval(commands::EvalArgs),
    /// Score a grid over the data's bounding box; writes SVG and CSV
    PlotBoundary(commands::PlotArgs),
}

#[derive(Subcommand)]
enum GenKind {
    /// Binary task with a spurious coordinate whose correlation flips at test time
    Spurious(SpuriousArgs),
    /// Multilabel task with co-occurring classes and masked counterfactuals
    Multilabel(MultilabelArgs),
}

fn parse_rho(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.5 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("rho must exceed 0.5 and be at most 1, got {v}"))
    }
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("expected a fraction in [0, 1], got {v}"))
    }
}

#[derive(Args)]
pub struct SpuriousArgs {
    #[arg(long)]
    n: Option<usize>,
    /// Input width (at least 3)
    #[arg(long)]
    d: Option<usize>,
    /// Core-coordinate noise: label flip probability and jitter scale
    #[arg(long)]
    sigma: Option<f64>,
    /// Probability that the spurious coordinate agrees with the label in training data
    #[arg(long, value_parser = parse_rho)]
    rho: Option<f64>,
    /// Fraction of training examples given a counterfactual partner
    #[arg(long, value_parser = parse_fraction)]
    pair_fraction: Option<f64>,
    #[arg(long)]
    n_validation: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if missing)
    #[arg(long)]
    out: std::path::PathBuf,
}

#[derive(Args)]
pub struct MultilabelArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    prototype_dim: Option<usize>,
    /// Standard deviation of per-coordinate feature noise
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, value_parser = parse_fraction)]
    pair_fraction: Option<f64>,
    #[arg(long)]
    n_test: Option<usize>,
    /// Share of the generated training data held out for validation
    #[arg(long, default_value_t = 0.1, value_parser = parse_fraction)]
    validation_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: std::path::PathBuf,
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("GRADSUP_THREADS") {
        let n: usize =
            v.parse().map_err(|_| UsageError(format!("GRADSUP_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(UsageError("GRADSUP_THREADS must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Gen { kind: GenKind::Spurious(a) } => commands::gen_spurious(a),
        Command::Gen { kind: GenKind::Multilabel(a) } => commands::gen_multilabel(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::PlotBoundary(a) => commands::plot_boundary(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
