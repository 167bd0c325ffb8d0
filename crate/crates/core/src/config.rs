//! Model and training hyperparameters.
//!
//! Every field has a serde default so partial JSON configs work; the
//! defaults are the desk-scale settings the acceptance runs use.

use serde::{Deserialize, Serialize};

/// Architecture dimensions and inference-time knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Joint embedding width shared by every stage.
    pub d_model: usize,
    /// Hidden width of the image encoder perceptron.
    pub img_hidden: usize,
    /// Token embedding width of the text encoder.
    pub txt_embed: usize,
    /// Hidden width of the text encoder perceptron.
    pub txt_hidden: usize,
    /// Causal decoder depth.
    pub decoder_layers: usize,
    /// Causal decoder heads.
    pub decoder_heads: usize,
    /// Feed-forward width inside the decoder.
    pub decoder_ffn: usize,
    /// Disease-graph embedding width.
    pub d_graph: usize,
    /// Graph attention layers.
    pub graph_layers: usize,
    /// EMA coefficient for the momentum encoders.
    pub momentum_beta: f64,
    /// Contrastive temperature.
    pub tau: f64,
    /// Lower clamp of the adaptive debias weight.
    pub alpha_min: f64,
    /// Hard-negative margin of the adaptive debias weight.
    pub margin: f64,
    /// Negative queue capacity.
    pub queue_capacity: usize,
    /// Dropout rate of the risk head.
    pub dropout: f64,
    /// Stochastic forward passes for the uncertainty score.
    pub mc_samples: usize,
    /// Recommendations kept per prediction.
    pub top_k_actions: usize,
    /// Max-probability threshold defining "high risk" for actionability.
    pub act_threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            img_hidden: 64,
            txt_embed: 32,
            txt_hidden: 64,
            decoder_layers: 2,
            decoder_heads: 4,
            decoder_ffn: 256,
            d_graph: 32,
            graph_layers: 2,
            momentum_beta: 0.99,
            tau: 0.07,
            alpha_min: 0.1,
            margin: 0.1,
            queue_capacity: 1024,
            dropout: 0.1,
            mc_samples: 20,
            top_k_actions: 2,
            act_threshold: 0.5,
        }
    }
}

/// Weights of the joint objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_time: f64,
    pub lambda_graph: f64,
    pub lambda_sup: f64,
    pub lambda_rl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_time: 0.5,
            lambda_graph: 0.5,
            lambda_sup: 1.0,
            lambda_rl: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> crate::Result<()> {
        for (name, v) in [
            ("lambda_time", self.lambda_time),
            ("lambda_graph", self.lambda_graph),
            ("lambda_sup", self.lambda_sup),
            ("lambda_rl", self.lambda_rl),
        ] {
            if !(v >= 0.0) {
                return Err(crate::CoreError::InvalidConfig(alloc::format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Weights of the composite reward plus the baseline decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    /// Weight on discrimination (AUROC).
    pub auroc: f64,
    /// Weight on calibration (1 - ECE).
    pub calibration: f64,
    /// Weight on actionability.
    pub actionability: f64,
    /// Decay of the moving-average baseline.
    pub baseline_decay: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            auroc: 0.5,
            calibration: 0.3,
            actionability: 0.2,
            baseline_decay: 0.9,
        }
    }
}

/// Optimizer family for the training loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Full training-run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Supervised epochs before temperature fitting.
    pub epochs: usize,
    /// Policy-gradient epochs after temperature fitting.
    pub rl_epochs: usize,
    pub batch_size: usize,
    /// Optimizer family. Plain momentum SGD plateaus well short of the
    /// achievable discrimination on this pipeline; Adam is the default.
    /// `"sgd"` with `lr: 0.05` restores the classical configuration.
    pub optimizer: OptimizerKind,
    /// Learning rate of the supervised phase.
    pub lr: f64,
    /// Learning rate of the policy-gradient phase.
    pub lr_rl: f64,
    /// Classical momentum (SGD only).
    pub sgd_momentum: f64,
    /// Global gradient-norm clip; zero disables.
    pub max_grad_norm: f64,
    /// Validation fraction of the patient-level split.
    pub val_fraction: f64,
    /// Test fraction of the patient-level split.
    pub test_fraction: f64,
    /// Optional truncation: keep only the most recent visits.
    pub max_visits: Option<usize>,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub reward_weights: RewardWeights,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            rl_epochs: 2,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            lr: 3e-4,
            lr_rl: 1e-4,
            sgd_momentum: 0.9,
            max_grad_norm: 1.0,
            val_fraction: 0.15,
            test_fraction: 0.15,
            max_visits: None,
            seed: 42,
            loss_weights: LossWeights::default(),
            reward_weights: RewardWeights::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> crate::Result<()> {
        self.loss_weights.validate()?;
        if self.batch_size == 0 {
            return Err(crate::CoreError::InvalidConfig(
                "batch_size must be positive".into(),
            ));
        }
        if !(self.val_fraction > 0.0 && self.test_fraction > 0.0)
            || self.val_fraction + self.test_fraction >= 1.0
        {
            return Err(crate::CoreError::InvalidConfig(
                "val/test fractions must be positive and sum below 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(crate::CoreError::InvalidConfig(
                "dropout must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}
