//! Deterministic CSV and JSONL writers. Floats are written with fixed
//! six-decimal formatting so identical runs produce identical bytes.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use vlrisk_core::metrics::ReliabilityTable;
use vlrisk_core::risk::PredictionBundle;
use vlrisk_core::training::EpochMetrics;

pub const METRICS_HEADER: &str =
    "epoch,split,loss_total,loss_cm,loss_tf,loss_gac,loss_sup,auroc,ece,act,reward";

pub fn write_metrics_csv(rows: &[EpochMetrics], path: &Path) -> Result<()> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            m.epoch,
            m.split.as_str(),
            m.loss_total,
            m.loss_cm,
            m.loss_tf,
            m.loss_gac,
            m.loss_sup,
            m.auroc,
            m.ece,
            m.act,
            m.reward
        ));
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn write_reliability_csv(table: &ReliabilityTable, path: &Path) -> Result<()> {
    let mut out = String::from("bin_lo,bin_hi,mean_confidence,accuracy,count\n");
    for b in &table.bins {
        out.push_str(&format!(
            "{:.2},{:.2},{:.6},{:.6},{}\n",
            b.lo, b.hi, b.mean_confidence, b.accuracy, b.count
        ));
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Per-patient prediction export.
pub fn write_predictions_jsonl(
    ids: &[u64],
    bundles: &[PredictionBundle],
    path: &Path,
) -> Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = std::io::BufWriter::new(file);
    for (id, b) in ids.iter().zip(bundles) {
        let row = serde_json::json!({
            "patient_id": id,
            "proba": b.proba,
            "s": b.uncertainty,
            "actions": b.recommendations,
            "review_flag": b.review_flag,
        });
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// History-length sweep table plus per-length seed averages.
pub fn write_sweep_csv(rows: &[(usize, u64, f64, f64)], path: &Path) -> Result<()> {
    let mut out = String::from("max_visits,seed,auroc,ece\n");
    for (mv, seed, auroc, ece) in rows {
        out.push_str(&format!("{mv},{seed},{auroc:.6},{ece:.6}\n"));
    }
    let mut lengths: Vec<usize> = rows.iter().map(|r| r.0).collect();
    lengths.dedup();
    out.push_str("max_visits,mean,auroc,ece\n");
    for mv in lengths {
        let subset: Vec<&(usize, u64, f64, f64)> = rows.iter().filter(|r| r.0 == mv).collect();
        let n = subset.len() as f64;
        let auroc = subset.iter().map(|r| r.2).sum::<f64>() / n;
        let ece = subset.iter().map(|r| r.3).sum::<f64>() / n;
        out.push_str(&format!("{mv},mean,{auroc:.6},{ece:.6}\n"));
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}
