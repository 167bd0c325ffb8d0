//! `vlrisk`: multimodal longitudinal risk modeling on synthetic
//! cohorts. Batch commands only; outputs are CSV and JSONL files.
//!
//! Exit codes: 0 success, 1 check or training failure, 2 usage or
//! config error. Flag overrides take precedence over config-file
//! values. Verbosity via the `VLRISK_LOG` environment variable.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vlrisk_cli::commands::{eval, generate, gradcheck, report, train};

#[derive(Parser)]
#[command(
    name = "vlrisk",
    about = "Multimodal longitudinal risk pipeline on synthetic cohorts",
    after_help = "Precedence: command-line flags override config-file values, \
                  which override built-in defaults. All randomness flows from --seed."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config file (cohort + train sections; partial configs fine)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config seeds when given
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort JSONL file (.gz by extension)
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        /// Output cohort path
        #[arg(long)]
        out: PathBuf,
        /// Override the number of patients
        #[arg(long)]
        patients: Option<usize>,
        /// Override the per-patient visit cap
        #[arg(long)]
        max_visits: Option<usize>,
    },
    /// Train on a cohort file; writes metrics.csv, checkpoint.{bin,json}, graph.json
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Input cohort JSONL
        #[arg(long)]
        cohort: PathBuf,
        /// Output directory
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Supervised epochs
        #[arg(long)]
        epochs: Option<usize>,
        /// Policy-gradient epochs
        #[arg(long)]
        rl_epochs: Option<usize>,
        /// Keep only the most recent visits per patient
        #[arg(long)]
        max_visits: Option<usize>,
        /// Weight of the time-modeling loss
        #[arg(long)]
        lambda_time: Option<f64>,
        /// Weight of the graph loss
        #[arg(long)]
        lambda_graph: Option<f64>,
        /// Weight of the supervised loss
        #[arg(long)]
        lambda_sup: Option<f64>,
        /// Weight of the policy-gradient loss
        #[arg(long)]
        lambda_rl: Option<f64>,
        /// Composite reward weights as "auroc,calibration,actionability"
        #[arg(long, value_parser = parse_reward_weights)]
        reward_weights: Option<RewardTriple>,
    },
    /// Score a cohort with a checkpoint; writes predictions.jsonl, metrics.csv, reliability.csv
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Input cohort JSONL
        #[arg(long)]
        cohort: PathBuf,
        /// Checkpoint stem (the train output's `checkpoint`)
        #[arg(long)]
        checkpoint: PathBuf,
        /// Graph JSON (defaults to graph.json beside the checkpoint)
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Output directory
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Verify recorded gradients against central finite differences
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
        /// Sampled parameter coordinates of the assembled model
        #[arg(long, default_value_t = 20)]
        model_coords: usize,
        /// Test hook: corrupt one gradient to exercise the failure path
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// History-length sweep: train/test at visit caps {4, 8, 16, 32}
    Report {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Seeds averaged per sweep point
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        /// Supervised epochs per sweep run
        #[arg(long)]
        epochs: Option<usize>,
        /// Cohort size for the sweep
        #[arg(long)]
        patients: Option<usize>,
    },
}

#[derive(Clone)]
struct RewardTriple(f64, f64, f64);

fn parse_reward_weights(s: &str) -> Result<RewardTriple, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected three comma-separated weights".into());
    }
    let mut vals = [0.0; 3];
    for (v, p) in vals.iter_mut().zip(&parts) {
        *v = p
            .trim()
            .parse::<f64>()
            .map_err(|e| format!("bad weight `{p}`: {e}"))?;
        if *v < 0.0 {
            return Err("reward weights must be nonnegative".into());
        }
    }
    Ok(RewardTriple(vals[0], vals[1], vals[2]))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("VLRISK_LOG")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate {
            common,
            out,
            patients,
            max_visits,
        } => generate::run(&generate::GenerateArgs {
            config: common.config,
            seed: common.seed,
            out,
            patients,
            max_visits,
        }),
        Command::Train {
            common,
            cohort,
            out,
            epochs,
            rl_epochs,
            max_visits,
            lambda_time,
            lambda_graph,
            lambda_sup,
            lambda_rl,
            reward_weights,
        } => train::run(&train::TrainArgs {
            config: common.config,
            cohort,
            out_dir: out,
            seed: common.seed,
            epochs,
            rl_epochs,
            max_visits,
            lambda_time,
            lambda_graph,
            lambda_sup,
            lambda_rl,
            reward_weights: reward_weights.map(|RewardTriple(a, b, c)| (a, b, c)),
        }),
        Command::Eval {
            common,
            cohort,
            checkpoint,
            graph,
            out,
        } => eval::run(&eval::EvalArgs {
            config: common.config,
            cohort,
            checkpoint,
            graph,
            out_dir: out,
            seed: common.seed,
        }),
        Command::Gradcheck {
            common,
            model_coords,
            corrupt_gradient,
        } => gradcheck::run(&gradcheck::GradcheckArgs {
            seed: common.seed.unwrap_or(42),
            model_coords,
            corrupt: corrupt_gradient,
        }),
        Command::Report {
            common,
            out,
            seeds,
            epochs,
            patients,
        } => report::run(&report::ReportArgs {
            config: common.config,
            out_dir: out,
            seed: common.seed,
            seeds,
            epochs,
            patients,
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
