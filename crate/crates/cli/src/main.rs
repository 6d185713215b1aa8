//! `feedbias`: reproducible position-bias experiments from the command line.
//!
//! Subcommands cover the full loop: `simulate` writes an interventional
//! session log with its ground-truth sidecar, `fit` estimates a position-
//! bias model from the log, `eval` runs the offline/online correlation
//! study, `export-curves` dumps model curves and scroll-depth PMFs as CSV,
//! and `replay` re-runs any command from its manifest byte-for-byte.
//!
//! Exit codes: 0 on success, 2 on usage/validation errors, 1 on runtime
//! failures. `FEEDBIAS_SEED` and `FEEDBIAS_OUTDIR` override the default
//! seed and output directory.

mod jobs;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use feedbias_core::error::Error;
use feedbias_core::models::{link_inverse, LinkKind};

#[derive(Parser)]
#[command(
    name = "feedbias",
    version,
    about = "Position-bias modeling experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an interventional session log.
    Simulate(SimulateArgs),
    /// Fit a position-bias model to a logged dataset.
    Fit(FitArgs),
    /// Run the offline/online correlation study.
    Eval(EvalArgs),
    /// Export position-bias curves and scroll-depth PMFs as CSV.
    ExportCurves(CurvesArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of sessions to simulate.
    #[arg(long, default_value_t = 1000)]
    sessions: u64,
    /// Slate length per session.
    #[arg(long, default_value_t = 25)]
    list_length: u32,
    /// Catalog size.
    #[arg(long, default_value_t = 100)]
    items: u64,
    /// Ground-truth scroll-budget weights (constant, user, time-of-day),
    /// softplus link. Defaults to a non-contextual budget with shape 1.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    theta: Option<Vec<f64>>,
    /// Seed for the fixed item-quality catalog.
    #[arg(long, default_value_t = 1)]
    quality_seed: u64,
    /// Rank intervention: full-shuffle or none.
    #[arg(long, default_value = "full-shuffle")]
    intervention: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct FitArgs {
    /// Path to a JSONL dataset produced by `simulate`.
    #[arg(long)]
    dataset: String,
    /// Model family: dcg, log, exp, prob, contextual-log, contextual-exp,
    /// contextual-prob, or empirical.
    #[arg(long)]
    family: String,
    /// Rank cutoff K for the NLL@K objective.
    #[arg(long, default_value_t = 50)]
    k: u32,
    #[arg(long, default_value_t = 1000)]
    max_iters: u32,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 0.5)]
    step: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Path to a JSONL dataset produced by `simulate`.
    #[arg(long)]
    dataset: String,
    /// Ground-truth sidecar; defaults to ground_truth.json next to the dataset.
    #[arg(long)]
    sidecar: Option<String>,
    /// Fitted model JSON files to evaluate (repeatable). The fixed DCG
    /// discount is always included as the baseline.
    #[arg(long = "model")]
    models: Vec<String>,
    /// Also evaluate the generating model from the sidecar.
    #[arg(long)]
    ground_truth: bool,
    /// Comma-separated policies: oracle, noisy:SD, random:SEED.
    #[arg(
        long,
        default_value = "oracle,noisy:0.02,noisy:0.05,noisy:0.1,noisy:0.2,noisy:0.5,random:1,random:2"
    )]
    policies: String,
    /// Number of study trials (fresh logged dataset each).
    #[arg(long, default_value_t = 5)]
    trials: u32,
    /// Monte-Carlo sessions for the online-reward side.
    #[arg(long, default_value_t = 10_000)]
    mc_sessions: u64,
    /// Override the per-trial logged-session count from the sidecar.
    #[arg(long)]
    sessions: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct CurvesArgs {
    /// Survival-form shape parameters to export.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.25, 0.5, 1.0, 2.0])]
    rhos: Vec<f64>,
    /// Logarithmic-form scale parameters to export.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0])]
    alphas: Vec<f64>,
    /// Exponential-form decay parameters to export.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.7])]
    gammas: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    max_rank: u32,
    #[arg(long, default_value_t = 10_000)]
    max_depth: u64,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Path to a manifest written by a previous command.
    manifest: String,
}

fn env_seed() -> u64 {
    std::env::var("FEEDBIAS_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(42)
}

fn env_out() -> String {
    std::env::var("FEEDBIAS_OUTDIR").unwrap_or_else(|_| "out".to_string())
}

fn default_theta() -> Vec<f64> {
    vec![link_inverse(1.0, LinkKind::Softplus), 0.0, 0.0]
}

fn run(cli: Cli) -> feedbias_core::Result<()> {
    match cli.command {
        Command::Simulate(a) => jobs::run_simulate(&jobs::SimulateJob {
            sessions: a.sessions,
            list_length: a.list_length,
            items: a.items,
            theta: a.theta.unwrap_or_else(default_theta),
            quality_seed: a.quality_seed,
            intervention: a.intervention,
            seed: a.seed.unwrap_or_else(env_seed),
            out: a.out.unwrap_or_else(env_out),
        }),
        Command::Fit(a) => jobs::run_fit(&jobs::FitJob {
            dataset: a.dataset,
            family: a.family,
            k_cutoff: a.k,
            max_iters: a.max_iters,
            tol: a.tol,
            step_size: a.step,
            seed: a.seed.unwrap_or_else(env_seed),
            out: a.out.unwrap_or_else(env_out),
        }),
        Command::Eval(a) => {
            let sidecar = a.sidecar.unwrap_or_else(|| {
                std::path::Path::new(&a.dataset)
                    .parent()
                    .unwrap_or_else(|| std::path::Path::new("."))
                    .join("ground_truth.json")
                    .display()
                    .to_string()
            });
            jobs::run_eval(&jobs::EvalJob {
                dataset: a.dataset,
                sidecar,
                models: a.models,
                ground_truth: a.ground_truth,
                policies: a.policies,
                trials: a.trials,
                mc_sessions: a.mc_sessions,
                sessions: a.sessions,
                seed: a.seed.unwrap_or_else(env_seed),
                out: a.out.unwrap_or_else(env_out),
            })
        }
        Command::ExportCurves(a) => jobs::run_curves(&jobs::CurvesJob {
            rhos: a.rhos,
            alphas: a.alphas,
            gammas: a.gammas,
            max_rank: a.max_rank,
            max_depth: a.max_depth,
            out: a.out.unwrap_or_else(env_out),
        }),
        Command::Replay(a) => jobs::run_replay(&a.manifest),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Usage(_) | Error::Domain(_) | Error::Parse(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
