//! Risk head: per-class logits, temperature-calibrated probabilities,
//! dropout-sampled uncertainty, and rule-table recommendations.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Fixed intervention vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    DietModification,
    ExercisePlan,
    StressManagement,
    VirtualFollowup,
    MedicationReminder,
}

/// Ordered intervention lists per outcome class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionTable {
    actions: Vec<Vec<Action>>,
}

impl ActionTable {
    /// Every class must map to at least one action.
    pub fn new(actions: Vec<Vec<Action>>) -> Result<ActionTable> {
        if actions.is_empty() || actions.iter().any(Vec::is_empty) {
            return Err(CoreError::InvalidConfig(
                "every class needs at least one action".into(),
            ));
        }
        Ok(ActionTable { actions })
    }

    /// Default table. Class roles by rising severity: 0 routine
    /// monitoring, 1 metabolic (diabetes-like), 2 vascular
    /// (hypertension-like), 3 renal (kidney-like), 4 cardiac; higher
    /// indices cycle through the non-routine rows.
    pub fn clinical_default(classes: usize) -> ActionTable {
        use Action::*;
        let base = [
            vec![VirtualFollowup],
            vec![DietModification, ExercisePlan],
            vec![StressManagement, MedicationReminder],
            vec![VirtualFollowup, MedicationReminder],
            vec![ExercisePlan, StressManagement],
        ];
        let actions = (0..classes.max(1))
            .map(|c| {
                if c < base.len() {
                    base[c].clone()
                } else {
                    base[1 + (c - 1) % 4].clone()
                }
            })
            .collect();
        ActionTable { actions }
    }

    pub fn classes(&self) -> usize {
        self.actions.len()
    }

    pub fn actions_for(&self, class: usize) -> Result<&[Action]> {
        self.actions
            .get(class)
            .map(Vec::as_slice)
            .ok_or(CoreError::ClassOutOfRange {
                id: class,
                classes: self.actions.len(),
            })
    }

    /// Ordered recommendations for a predicted class, truncated to `top_k`.
    pub fn recommend(&self, class: usize, top_k: usize) -> Result<Vec<Action>> {
        let all = self.actions_for(class)?;
        Ok(all.iter().copied().take(top_k.max(1)).collect())
    }
}

/// The model output triple plus the review gate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionBundle {
    /// Class-probability simplex vector.
    pub proba: Vec<f64>,
    /// Mean per-class predictive variance under dropout sampling.
    pub uncertainty: f64,
    /// Ordered recommended interventions for the predicted class.
    pub recommendations: Vec<Action>,
    /// Set when uncertainty exceeds the review threshold.
    pub review_flag: bool,
}

impl PredictionBundle {
    pub fn predicted_class(&self) -> usize {
        argmax(&self.proba)
    }

    pub fn max_proba(&self) -> f64 {
        self.proba.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// First index of the maximum (deterministic under ties).
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Affine per-class scoring head with calibration temperature and
/// dropout-based uncertainty sampling.
pub struct RiskHead {
    /// Per-class weight rows, `classes x d_model`.
    pub weights: Tensor,
    /// Per-class biases.
    pub bias: Tensor,
    /// Calibration temperature, fitted after supervised training.
    pub temperature: f64,
    /// Dropout rate for uncertainty sampling.
    pub dropout: f64,
    /// Number of stochastic passes.
    pub mc_samples: usize,
}

impl RiskHead {
    pub fn new(classes: usize, d_model: usize, dropout: f64, mc_samples: usize, rng: &mut Rng) -> RiskHead {
        RiskHead {
            weights: Tensor::param_uniform(&[classes, d_model], d_model, rng),
            bias: Tensor::param_uniform(&[classes], d_model, rng),
            temperature: 1.0,
            dropout,
            mc_samples: mc_samples.max(1),
        }
    }

    pub fn classes(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn parameters(&self) -> Vec<(alloc::string::String, Tensor)> {
        vec![
            ("risk_head.weights".into(), self.weights.clone()),
            ("risk_head.bias".into(), self.bias.clone()),
        ]
    }

    /// Per-class affine scores.
    pub fn logits(&self, state: &Tensor) -> Result<Tensor> {
        if state.shape().len() != 1 || state.len() != self.weights.shape()[1] {
            return Err(CoreError::LengthMismatch {
                context: "risk head input",
                expected: self.weights.shape()[1],
                got: state.len(),
            });
        }
        Ok(self.weights.matvec(state).add(&self.bias))
    }

    /// Temperature-scaled softmax of the logits.
    pub fn calibrated_proba(&self, logits: &Tensor, temperature: f64) -> Result<Tensor> {
        logits.softmax_rows(temperature)
    }

    /// Dropout-sampled predictive uncertainty: the mean over classes of
    /// the population variance of the sampled class probabilities.
    /// Disabled dropout (or a single sample) yields exactly zero.
    pub fn mc_uncertainty(&self, state: &Tensor, rng: &mut Rng) -> Result<f64> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::InvalidDropoutRate { got: self.dropout });
        }
        if self.dropout == 0.0 || self.mc_samples <= 1 {
            // identical samples carry no variance
            return Ok(0.0);
        }
        let state = state.detach();
        let mut samples = Vec::with_capacity(self.mc_samples);
        for _ in 0..self.mc_samples {
            let dropped = state.dropout(self.dropout, rng, true)?;
            let logits = self.logits(&dropped)?;
            samples.push(self.calibrated_proba(&logits, self.temperature)?.to_vec());
        }
        Ok(population_variance_mean(&samples))
    }
}

/// Mean over coordinates of the population (divide-by-M) variance
/// across samples.
pub fn population_variance_mean(samples: &[Vec<f64>]) -> f64 {
    let m = samples.len();
    if m == 0 {
        return 0.0;
    }
    let dim = samples[0].len();
    let mut total = 0.0;
    for c in 0..dim {
        let mean: f64 = samples.iter().map(|s| s[c]).sum::<f64>() / m as f64;
        let var: f64 = samples.iter().map(|s| (s[c] - mean) * (s[c] - mean)).sum::<f64>() / m as f64;
        total += var;
    }
    total / dim as f64
}

/// Assemble the full output bundle for one patient.
pub fn build_bundle(
    proba: Vec<f64>,
    uncertainty: f64,
    table: &ActionTable,
    top_k: usize,
    review_threshold: f64,
) -> Result<PredictionBundle> {
    let class = argmax(&proba);
    let recommendations = table.recommend(class, top_k)?;
    Ok(PredictionBundle {
        proba,
        uncertainty,
        recommendations,
        review_flag: uncertainty > review_threshold,
    })
}
