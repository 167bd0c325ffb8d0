//! Checkpoints: a flat binary of little-endian f64 arrays next to a
//! JSON manifest carrying names, shapes, byte offsets, and the scalar
//! training state. Round-trips are bit-exact.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vlrisk_core::config::ModelConfig;
use vlrisk_core::model::{DataDims, RiskModel};
use vlrisk_core::training::{Baseline, TrainOutcome};
use vlrisk_core::{Rng, Tensor};

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the binary file.
    offset: u64,
    /// Number of f64 values.
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    model: ModelConfig,
    dims: DataDims,
    temperature: f64,
    review_threshold: Option<f64>,
    epoch: usize,
    optimizer_steps: u64,
    rng_seed: u64,
    rng_counter: u64,
    baseline_value: f64,
    baseline_decay: f64,
    entries: Vec<ArrayEntry>,
}

pub struct LoadedCheckpoint {
    pub model: RiskModel,
    pub epoch: usize,
    pub optimizer_steps: u64,
    pub rng: Rng,
    pub baseline: Baseline,
    /// Optimizer state arrays by stored name (`opt_*` prefixes).
    pub optimizer_state: BTreeMap<String, Vec<f64>>,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

pub fn save_checkpoint(stem: &Path, outcome: &TrainOutcome) -> Result<()> {
    let (bin_path, json_path) = paths(stem);
    let params = outcome.model.parameters();
    let mut arrays: Vec<(String, Vec<f64>)> = Vec::new();
    for (name, t) in &params {
        arrays.push((name.clone(), t.to_vec()));
    }
    for (name, t) in outcome.model.momentum_parameters() {
        arrays.push((name, t.to_vec()));
    }
    let (optimizer_steps, opt_arrays) = outcome.optimizer.state_arrays(&params);
    arrays.extend(opt_arrays);

    let shape_of: BTreeMap<String, Vec<usize>> = outcome
        .model
        .parameters()
        .into_iter()
        .chain(outcome.model.momentum_parameters())
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let mut entries = Vec::with_capacity(arrays.len());
    let mut bin = Vec::new();
    for (name, values) in &arrays {
        let offset = bin.len() as u64;
        for v in values {
            bin.extend_from_slice(&v.to_le_bytes());
        }
        let shape = shape_of.get(name).cloned().unwrap_or_else(|| vec![values.len()]);
        entries.push(ArrayEntry {
            name: name.clone(),
            shape,
            offset,
            len: values.len(),
        });
    }

    let (rng_seed, rng_counter) = outcome.rng.state();
    let manifest = Manifest {
        model: outcome.model.config.clone(),
        dims: outcome.model.dims,
        temperature: outcome.model.head.temperature,
        review_threshold: outcome
            .model
            .review_threshold
            .is_finite()
            .then_some(outcome.model.review_threshold),
        epoch: outcome.epochs_done,
        optimizer_steps,
        rng_seed,
        rng_counter,
        baseline_value: outcome.baseline.value,
        baseline_decay: outcome.baseline.decay,
        entries,
    };

    std::fs::File::create(&bin_path)
        .with_context(|| format!("creating {}", bin_path.display()))?
        .write_all(&bin)?;
    std::fs::write(&json_path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing {}", json_path.display()))?;
    Ok(())
}

pub fn load_checkpoint(stem: &Path) -> Result<LoadedCheckpoint> {
    let (bin_path, json_path) = paths(stem);
    let manifest: Manifest = serde_json::from_str(
        &std::fs::read_to_string(&json_path)
            .with_context(|| format!("reading {}", json_path.display()))?,
    )
    .with_context(|| format!("parsing {}", json_path.display()))?;
    let bin = std::fs::read(&bin_path).with_context(|| format!("reading {}", bin_path.display()))?;

    let mut arrays: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for entry in &manifest.entries {
        let start = entry.offset as usize;
        let end = start + entry.len * 8;
        if end > bin.len() {
            bail!(
                "{}: array `{}` extends past the end of the binary",
                bin_path.display(),
                entry.name
            );
        }
        let values: Vec<f64> = bin[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.insert(entry.name.clone(), values);
    }

    // architecture is rebuilt from the manifest, then values overwrite
    // the fresh initialization
    let mut scratch_rng = Rng::new(0);
    let mut model = RiskModel::new(&manifest.model, manifest.dims, &mut scratch_rng)
        .map_err(|e| anyhow::anyhow!("rebuilding model: {e}"))?;
    let param_values: BTreeMap<String, Vec<f64>> = arrays
        .iter()
        .filter(|(k, _)| !k.starts_with("opt_"))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    model
        .load_values(&param_values)
        .map_err(|e| anyhow::anyhow!("loading parameters: {e}"))?;
    model.head.temperature = manifest.temperature;
    model.review_threshold = manifest.review_threshold.unwrap_or(f64::INFINITY);

    let optimizer_state = arrays
        .into_iter()
        .filter(|(k, _)| k.starts_with("opt_"))
        .collect();

    Ok(LoadedCheckpoint {
        model,
        epoch: manifest.epoch,
        optimizer_steps: manifest.optimizer_steps,
        rng: Rng::from_state(manifest.rng_seed, manifest.rng_counter),
        baseline: Baseline {
            value: manifest.baseline_value,
            decay: manifest.baseline_decay,
        },
        optimizer_state,
    })
}

/// Bitwise equality of two parameter sets (test helper).
pub fn params_identical(a: &[(String, Tensor)], b: &[(String, Tensor)]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|((na, ta), (nb, tb))| {
            na == nb
                && ta
                    .to_vec()
                    .iter()
                    .zip(tb.to_vec().iter())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
        })
}
