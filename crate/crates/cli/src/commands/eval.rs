//! `eval`: score a cohort file with a trained checkpoint, writing the
//! per-patient predictions JSONL, a metrics CSV, and the reliability
//! table.

use std::path::PathBuf;

use vlrisk_core::metrics::reliability_table;
use vlrisk_core::risk::ActionTable;
use vlrisk_core::training::{evaluate, EpochMetrics, Split};

use crate::io::{checkpoint, config::load_config, csv, graph_file, jsonl};
use crate::{check, usage, CliResult};

pub struct EvalArgs {
    pub config: Option<PathBuf>,
    pub cohort: PathBuf,
    pub checkpoint: PathBuf,
    pub graph: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
}

pub fn run(args: &EvalArgs) -> CliResult {
    let app = match load_config(args.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    let cohort_all = match jsonl::load_cohort(&args.cohort) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    let loaded = match checkpoint::load_checkpoint(&args.checkpoint) {
        Ok(l) => l,
        Err(e) => return usage(e),
    };
    let graph_path = args
        .graph
        .clone()
        .unwrap_or_else(|| args.checkpoint.with_file_name("graph.json"));
    let graph = match graph_file::load_graph(&graph_path) {
        Ok(g) => g,
        Err(e) => return usage(e),
    };

    let cohort: Vec<_> = match app.train.max_visits {
        Some(k) => cohort_all.iter().map(|p| p.truncate_history(k)).collect(),
        None => cohort_all,
    };
    let refs: Vec<&_> = cohort.iter().collect();
    let table = ActionTable::clinical_default(loaded.model.dims.classes);
    let seed = args.seed.unwrap_or(app.train.seed);
    let eval = match evaluate(
        &loaded.model,
        &graph,
        &refs,
        &table,
        &app.train.reward_weights,
        app.train.model.top_k_actions,
        app.train.model.act_threshold,
        seed,
    ) {
        Ok(e) => e,
        Err(e) => return check(anyhow::anyhow!("evaluation failed: {e}")),
    };

    if let Err(e) = std::fs::create_dir_all(&args.out_dir) {
        return usage(anyhow::anyhow!("creating {}: {e}", args.out_dir.display()));
    }
    if let Err(e) =
        csv::write_predictions_jsonl(&eval.patient_ids, &eval.bundles, &args.out_dir.join("predictions.jsonl"))
    {
        return check(e);
    }
    let row = EpochMetrics {
        epoch: loaded.epoch,
        split: Split::Test,
        loss_total: 0.0,
        loss_cm: 0.0,
        loss_tf: 0.0,
        loss_gac: 0.0,
        loss_sup: 0.0,
        auroc: eval.auroc,
        ece: eval.ece,
        act: eval.act,
        reward: eval.reward,
    };
    if let Err(e) = csv::write_metrics_csv(&[row], &args.out_dir.join("metrics.csv")) {
        return check(e);
    }
    match reliability_table(&eval.probas, &eval.labels, 10) {
        Ok(t) => {
            if let Err(e) = csv::write_reliability_csv(&t, &args.out_dir.join("reliability.csv")) {
                return check(e);
            }
        }
        Err(e) => return check(anyhow::anyhow!("reliability table failed: {e}")),
    }

    println!(
        "evaluated {} patients | auroc={:.4} ece={:.4} act={:.4} reward={:.4}",
        eval.bundles.len(),
        eval.auroc,
        eval.ece,
        eval.act,
        eval.reward
    );
    Ok(())
}
