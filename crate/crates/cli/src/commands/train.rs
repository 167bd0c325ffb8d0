//! `train`: fit the pipeline on a cohort file, writing the metrics CSV,
//! the checkpoint pair, and the disease-graph JSON.

use std::path::PathBuf;

use vlrisk_core::training::train;

use crate::io::{checkpoint, config::load_config, csv, graph_file, jsonl};
use crate::{check, usage, CliResult};

pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub cohort: PathBuf,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub rl_epochs: Option<usize>,
    pub max_visits: Option<usize>,
    pub lambda_time: Option<f64>,
    pub lambda_graph: Option<f64>,
    pub lambda_sup: Option<f64>,
    pub lambda_rl: Option<f64>,
    pub reward_weights: Option<(f64, f64, f64)>,
}

pub fn apply_overrides(cfg: &mut vlrisk_core::config::TrainConfig, args: &TrainArgs) {
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(e) = args.rl_epochs {
        cfg.rl_epochs = e;
    }
    if args.max_visits.is_some() {
        cfg.max_visits = args.max_visits;
    }
    if let Some(v) = args.lambda_time {
        cfg.loss_weights.lambda_time = v;
    }
    if let Some(v) = args.lambda_graph {
        cfg.loss_weights.lambda_graph = v;
    }
    if let Some(v) = args.lambda_sup {
        cfg.loss_weights.lambda_sup = v;
    }
    if let Some(v) = args.lambda_rl {
        cfg.loss_weights.lambda_rl = v;
    }
    if let Some((a, c, act)) = args.reward_weights {
        cfg.reward_weights.auroc = a;
        cfg.reward_weights.calibration = c;
        cfg.reward_weights.actionability = act;
    }
}

pub fn run(args: &TrainArgs) -> CliResult {
    let mut app = match load_config(args.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    apply_overrides(&mut app.train, args);
    if let Err(e) = app.train.validate() {
        return usage(anyhow::anyhow!("{e}"));
    }
    let cohort = match jsonl::load_cohort(&args.cohort) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    if let Err(e) = std::fs::create_dir_all(&args.out_dir) {
        return usage(anyhow::anyhow!("creating {}: {e}", args.out_dir.display()));
    }

    let outcome = match train(&cohort, &app.train) {
        Ok(o) => o,
        Err(e) => return check(anyhow::anyhow!("training failed: {e}")),
    };

    let metrics_path = args.out_dir.join("metrics.csv");
    if let Err(e) = csv::write_metrics_csv(&outcome.metrics, &metrics_path) {
        return check(e);
    }
    if let Err(e) = checkpoint::save_checkpoint(&args.out_dir.join("checkpoint"), &outcome) {
        return check(e);
    }
    if let Err(e) = graph_file::save_graph(&outcome.graph, &args.out_dir.join("graph.json")) {
        return check(e);
    }

    let test_row = outcome.metrics.last().expect("train emits a test row");
    println!(
        "trained {} epochs | test auroc={:.4} ece={:.4} act={:.4} reward={:.4} | T={:.2}",
        outcome.epochs_done,
        test_row.auroc,
        test_row.ece,
        test_row.act,
        test_row.reward,
        outcome.model.head.temperature
    );
    Ok(())
}
