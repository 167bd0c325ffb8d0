//! Evaluation primitives: AUROC, expected calibration error, and
//! actionability, plus the reliability table behind the ECE number.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::risk::{argmax, ActionTable, PredictionBundle};

/// One confidence bin of the reliability table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub mean_confidence: f64,
    pub accuracy: f64,
    pub count: usize,
}

/// Equal-width confidence bins over `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityTable {
    pub bins: Vec<ReliabilityBin>,
}

impl ReliabilityTable {
    /// Count-weighted mean absolute confidence/accuracy gap.
    pub fn ece(&self) -> f64 {
        let total: usize = self.bins.iter().map(|b| b.count).sum();
        if total == 0 {
            return 0.0;
        }
        self.bins
            .iter()
            .filter(|b| b.count > 0)
            .map(|b| (b.count as f64 / total as f64) * (b.accuracy - b.mean_confidence).abs())
            .sum()
    }
}

/// Binary AUROC by midrank statistic: the probability that a random
/// positive outranks a random negative, ties counting one half. Exactly
/// equals exhaustive pair counting.
pub fn auroc_binary(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.is_empty() {
        return Err(CoreError::EmptyInput("auroc scores"));
    }
    assert_eq!(scores.len(), labels.len(), "scores/labels length mismatch");
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CoreError::SingleClassLabels);
    }

    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("NaN score"));

    // midranks over tie groups, ranks are 1-based
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let midrank = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            if labels[k] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }

    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Macro one-vs-rest AUROC over the classes present in the labels.
pub fn auroc_macro(probas: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if probas.is_empty() {
        return Err(CoreError::EmptyInput("auroc probabilities"));
    }
    let classes = probas[0].len();
    let mut total = 0.0;
    let mut counted = 0;
    for c in 0..classes {
        let flags: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        if flags.iter().all(|&f| f) || flags.iter().all(|&f| !f) {
            continue;
        }
        let scores: Vec<f64> = probas.iter().map(|p| p[c]).collect();
        total += auroc_binary(&scores, &flags)?;
        counted += 1;
    }
    if counted == 0 {
        return Err(CoreError::SingleClassLabels);
    }
    Ok(total / counted as f64)
}

fn validate_simplex(probas: &[Vec<f64>]) -> Result<()> {
    for p in probas {
        let sum: f64 = p.iter().sum();
        if p.iter().any(|&x| !(-1e-9..=1.0 + 1e-9).contains(&x)) || (sum - 1.0).abs() > 1e-6 {
            return Err(CoreError::MetricDomain {
                context: "probability vector",
                got: sum,
            });
        }
    }
    Ok(())
}

/// Reliability table over `bins` equal-width confidence bins, where
/// confidence is the max class probability and a prediction is correct
/// when its argmax matches the label.
pub fn reliability_table(
    probas: &[Vec<f64>],
    labels: &[usize],
    bins: usize,
) -> Result<ReliabilityTable> {
    if probas.is_empty() {
        return Err(CoreError::EmptyInput("reliability inputs"));
    }
    assert_eq!(probas.len(), labels.len(), "probas/labels length mismatch");
    validate_simplex(probas)?;
    let bins = bins.max(1);
    let mut conf_sum = vec![0.0; bins];
    let mut hit_sum = vec![0usize; bins];
    let mut count = vec![0usize; bins];
    for (p, &label) in probas.iter().zip(labels) {
        let pred = argmax(p);
        let conf = p[pred];
        let b = ((conf * bins as f64) as usize).min(bins - 1);
        conf_sum[b] += conf;
        hit_sum[b] += (pred == label) as usize;
        count[b] += 1;
    }
    let width = 1.0 / bins as f64;
    let bins = (0..bins)
        .map(|b| ReliabilityBin {
            lo: b as f64 * width,
            hi: (b + 1) as f64 * width,
            mean_confidence: if count[b] > 0 {
                conf_sum[b] / count[b] as f64
            } else {
                0.0
            },
            accuracy: if count[b] > 0 {
                hit_sum[b] as f64 / count[b] as f64
            } else {
                0.0
            },
            count: count[b],
        })
        .collect();
    Ok(ReliabilityTable { bins })
}

/// Expected calibration error over ten equal-width bins by default.
pub fn ece(probas: &[Vec<f64>], labels: &[usize], bins: usize) -> Result<f64> {
    Ok(reliability_table(probas, labels, bins)?.ece())
}

/// Fraction of high-confidence predictions whose recommendations carry
/// at least one table action for the predicted class. No high-risk
/// bundles means actionability one by convention.
pub fn actionability(bundles: &[PredictionBundle], table: &ActionTable, threshold: f64) -> f64 {
    let mut high = 0usize;
    let mut actionable = 0usize;
    for b in bundles {
        if b.max_proba() < threshold {
            continue;
        }
        high += 1;
        let expected = table.actions_for(b.predicted_class()).unwrap_or(&[]);
        if b.recommendations.iter().any(|a| expected.contains(a)) {
            actionable += 1;
        }
    }
    if high == 0 {
        1.0
    } else {
        actionable as f64 / high as f64
    }
}
