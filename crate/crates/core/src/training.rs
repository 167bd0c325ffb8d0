//! Joint objective assembly, SGD with classical momentum, temperature
//! fitting, the composite reward, and policy-gradient fine-tuning.
//!
//! Training runs two phases: a supervised phase optimizing the
//! contrastive, time, graph, and supervised terms, then (after the
//! calibration temperature is fitted on validation likelihood) a
//! policy-gradient phase that adds the reward-driven term at a reduced
//! learning rate, with the calibrated class distribution acting as the
//! policy. The moving-average baseline is updated once per step.

use alloc::string::String;
use alloc::vec::Vec;

use crate::alignment::{infonce_loss, AlignmentConfig, NegativeQueue};
use crate::cohort::PatientRecord;
use crate::config::{LossWeights, OptimizerKind, RewardWeights, TrainConfig};
use crate::error::{CoreError, Result};
use crate::graph::{build_graph_from_cohort, DiseaseGraph};
use crate::metrics::{actionability, auroc_macro, ece};
use crate::model::{DataDims, ForwardOptions, RiskModel};
use crate::risk::{build_bundle, ActionTable, PredictionBundle};
use crate::rng::Rng;
use crate::tensor::Tensor;

fn global_clip_scale(params: &[(String, Tensor)], max_norm: f64) -> f64 {
    if max_norm <= 0.0 {
        return 1.0;
    }
    let total_sq: f64 = params
        .iter()
        .map(|(_, p)| p.grad().iter().map(|g| g * g).sum::<f64>())
        .sum();
    let norm = libm::sqrt(total_sq);
    if norm > max_norm {
        max_norm / norm
    } else {
        1.0
    }
}

/// Stochastic gradient descent with classical momentum and global
/// gradient-norm clipping.
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    /// Global norm ceiling applied before the momentum update; zero
    /// disables clipping. The squared-error gap objective has curvature
    /// proportional to the state norm and diverges unclipped at the
    /// configured learning rate.
    pub max_grad_norm: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Sgd {
        Sgd {
            lr,
            momentum,
            max_grad_norm: 1.0,
            velocity: Vec::new(),
        }
    }

    pub fn zero_grads(params: &[(String, Tensor)]) {
        for (_, p) in params {
            p.zero_grad();
        }
    }

    /// One update: `v <- momentum * v + clip(grad); p <- p - lr * v`.
    pub fn step(&mut self, params: &[(String, Tensor)]) {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|(_, p)| alloc::vec![0.0; p.len()]).collect();
        }
        let scale = global_clip_scale(params, self.max_grad_norm);
        for ((_, p), vel) in params.iter().zip(self.velocity.iter_mut()) {
            let grad = p.grad();
            p.update_values(|values| {
                for i in 0..values.len() {
                    vel[i] = self.momentum * vel[i] + grad[i] * scale;
                    values[i] -= self.lr * vel[i];
                }
            });
        }
    }

    pub fn velocities(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    pub fn restore_velocities(&mut self, velocity: Vec<Vec<f64>>) {
        self.velocity = velocity;
    }
}

/// Adam with bias correction and the same global clip.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_grad_norm: f64,
    steps: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: 1.0,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &[(String, Tensor)]) {
        if self.first.is_empty() {
            self.first = params.iter().map(|(_, p)| alloc::vec![0.0; p.len()]).collect();
            self.second = params.iter().map(|(_, p)| alloc::vec![0.0; p.len()]).collect();
        }
        self.steps += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.steps as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.steps as f64);
        let scale = global_clip_scale(params, self.max_grad_norm);
        for ((_, p), (m, v)) in params
            .iter()
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let grad = p.grad();
            p.update_values(|values| {
                for i in 0..values.len() {
                    let g = grad[i] * scale;
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                    values[i] -= self.lr * (m[i] / bc1) / (libm::sqrt(v[i] / bc2) + self.eps);
                }
            });
        }
    }

    pub fn state(&self) -> (u64, &[Vec<f64>], &[Vec<f64>]) {
        (self.steps, &self.first, &self.second)
    }

    pub fn restore(&mut self, steps: u64, first: Vec<Vec<f64>>, second: Vec<Vec<f64>>) {
        self.steps = steps;
        self.first = first;
        self.second = second;
    }
}

/// The optimizer behind the training loop; the policy-gradient
/// operation keeps its dedicated momentum-SGD state.
pub enum Optimizer {
    Sgd(Sgd),
    Adam(Adam),
}

impl Optimizer {
    pub fn from_config(cfg: &TrainConfig) -> Optimizer {
        match cfg.optimizer {
            OptimizerKind::Sgd => {
                let mut opt = Sgd::new(cfg.lr, cfg.sgd_momentum);
                opt.max_grad_norm = cfg.max_grad_norm;
                Optimizer::Sgd(opt)
            }
            OptimizerKind::Adam => {
                let mut opt = Adam::new(cfg.lr);
                opt.max_grad_norm = cfg.max_grad_norm;
                Optimizer::Adam(opt)
            }
        }
    }

    pub fn step(&mut self, params: &[(String, Tensor)]) {
        match self {
            Optimizer::Sgd(o) => o.step(params),
            Optimizer::Adam(o) => o.step(params),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        match self {
            Optimizer::Sgd(o) => o.lr = lr,
            Optimizer::Adam(o) => o.lr = lr,
        }
    }

    /// Named state arrays for checkpointing, aligned with `params`.
    pub fn state_arrays(&self, params: &[(String, Tensor)]) -> (u64, Vec<(String, Vec<f64>)>) {
        let mut out = Vec::new();
        match self {
            Optimizer::Sgd(o) => {
                for (i, (name, _)) in params.iter().enumerate() {
                    let v = o.velocity.get(i).cloned().unwrap_or_default();
                    out.push((alloc::format!("opt_velocity/{name}"), v));
                }
                (0, out)
            }
            Optimizer::Adam(o) => {
                for (i, (name, _)) in params.iter().enumerate() {
                    out.push((
                        alloc::format!("opt_m/{name}"),
                        o.first.get(i).cloned().unwrap_or_default(),
                    ));
                    out.push((
                        alloc::format!("opt_v/{name}"),
                        o.second.get(i).cloned().unwrap_or_default(),
                    ));
                }
                (o.steps, out)
            }
        }
    }
}

/// Moving-average reward baseline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Baseline {
    pub value: f64,
    pub decay: f64,
}

impl Baseline {
    pub fn new(decay: f64) -> Baseline {
        Baseline { value: 0.0, decay }
    }

    pub fn update(&mut self, reward: f64) {
        self.value = self.decay * self.value + (1.0 - self.decay) * reward;
    }
}

/// Weighted sum of the five loss components. The gradient is the
/// matching weighted sum of component gradients by linearity.
pub fn total_loss(
    cm: &Tensor,
    tf: &Tensor,
    gac: &Tensor,
    sup: &Tensor,
    rlhf: &Tensor,
    weights: &LossWeights,
) -> Result<Tensor> {
    for (name, c) in [("cm", cm), ("tf", tf), ("gac", gac), ("sup", sup), ("rlhf", rlhf)] {
        if !c.item().is_finite() {
            let _ = name;
            return Err(CoreError::NonFiniteInput {
                context: "loss component",
            });
        }
    }
    Ok(cm
        .add(&tf.mul_scalar(weights.lambda_time))
        .add(&gac.mul_scalar(weights.lambda_graph))
        .add(&sup.mul_scalar(weights.lambda_sup))
        .add(&rlhf.mul_scalar(weights.lambda_rl)))
}

/// Negative log-likelihood of the true class with a 1e-12 probability
/// floor.
pub fn supervised_loss(proba: &Tensor, label: usize) -> Result<Tensor> {
    if label >= proba.len() {
        return Err(CoreError::ClassOutOfRange {
            id: label,
            classes: proba.len(),
        });
    }
    Ok(proba.element(label).clamp_min(1e-12).ln().neg())
}

/// `R = w1 * AUROC + w2 * (1 - ECE) + w3 * Act`, inputs all in `[0,1]`.
pub fn composite_reward(auroc: f64, ece: f64, act: f64, weights: &RewardWeights) -> Result<f64> {
    for (context, v) in [
        ("reward auroc", auroc),
        ("reward ece", ece),
        ("reward act", act),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(CoreError::MetricDomain { context, got: v });
        }
    }
    Ok(weights.auroc * auroc + weights.calibration * (1.0 - ece) + weights.actionability * act)
}

/// One policy-gradient update: push `-(R - baseline) * grad(log pi)`
/// through the recorded graph and step the optimizer, then advance the
/// baseline. A zero advantage applies no update at all (bitwise), which
/// also keeps stale optimizer momentum from leaking into the
/// parameters.
pub fn policy_gradient_step(
    mean_log_prob: &Tensor,
    reward: f64,
    baseline: &mut Baseline,
    optimizer: &mut Sgd,
    params: &[(String, Tensor)],
) -> Result<()> {
    let advantage = reward - baseline.value;
    if advantage != 0.0 {
        let loss = mean_log_prob.mul_scalar(-advantage);
        Sgd::zero_grads(params);
        loss.backward()?;
        optimizer.step(params);
    }
    baseline.update(reward);
    Ok(())
}

/// Calibration temperature by grid search over `{0.25, 0.30, .., 4.0}`
/// minimizing validation negative log-likelihood.
pub fn fit_temperature(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if logits.is_empty() {
        return Err(CoreError::EmptyInput("temperature fit inputs"));
    }
    assert_eq!(logits.len(), labels.len(), "logits/labels length mismatch");
    let mut best = (f64::INFINITY, 0.25);
    let mut step = 0usize;
    loop {
        let t = 0.25 + 0.05 * step as f64;
        if t > 4.0 + 1e-9 {
            break;
        }
        let mut nll = 0.0;
        for (l, &y) in logits.iter().zip(labels) {
            let scaled: Vec<f64> = l.iter().map(|v| v / t).collect();
            let mx = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + libm::log(scaled.iter().map(|v| libm::exp(v - mx)).sum::<f64>());
            nll += lse - scaled[y];
        }
        nll /= logits.len() as f64;
        if nll < best.0 {
            best = (nll, t);
        }
        step += 1;
    }
    Ok(best.1)
}

/// Nearest-rank upper percentile (`q` in `[0, 1]`).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::INFINITY;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN percentile input"));
    let rank = libm::ceil(q * sorted.len() as f64) as usize;
    sorted[rank.saturating_sub(1).min(sorted.len() - 1)]
}

// ---- batch assembly -----------------------------------------------------

/// Loss components of one assembled batch, still attached to the graph.
pub struct BatchAssembly {
    pub cm: Tensor,
    pub tf: Tensor,
    pub gac: Tensor,
    pub sup: Tensor,
    /// Calibrated class probabilities per patient (values).
    pub probas: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Differentiable per-class log-infrastructure for the policy term.
    pub proba_tensors: Vec<Tensor>,
}

/// Forward a batch and assemble the supervised-phase loss components.
/// `dropout` should be on for optimization steps and off for split
/// evaluation; the RL term is layered on top by the caller.
pub fn assemble_batch(
    model: &RiskModel,
    graph_embeddings: &Tensor,
    patients: &[&PatientRecord],
    queue: &NegativeQueue,
    held_out_pairs: &[(usize, usize)],
    dropout: bool,
    temperature: f64,
    rng: &mut Rng,
) -> Result<BatchAssembly> {
    if patients.is_empty() {
        return Err(CoreError::EmptyInput("batch"));
    }
    let mut img_pairs = Vec::new();
    let mut txt_pairs = Vec::new();
    let mut sup_terms = Vec::new();
    let mut gap_terms = Vec::new();
    let mut probas = Vec::new();
    let mut labels = Vec::new();
    let mut proba_tensors = Vec::new();

    for patient in patients {
        let mut opts = ForwardOptions {
            dropout,
            rng,
            temperature,
        };
        let fwd = model.forward(patient, graph_embeddings, &mut opts)?;
        sup_terms.push(supervised_loss(&fwd.proba, patient.label)?);
        for (t, pred) in fwd.gap_predictions.iter().enumerate() {
            let target = libm::log1p(patient.visits[t + 1].delta_t);
            let err = pred.add_scalar(-target);
            gap_terms.push(err.mul(&err));
        }
        img_pairs.extend(fwd.img_embeddings);
        txt_pairs.extend(fwd.txt_embeddings);
        probas.push(fwd.proba.to_vec());
        labels.push(patient.label);
        proba_tensors.push(fwd.proba);
    }

    let align_cfg = AlignmentConfig {
        tau: model.config.tau,
        alpha_min: model.config.alpha_min,
        margin: model.config.margin,
    };
    // the first optimization step runs before anything was enqueued
    let cm = if queue.is_empty() {
        Tensor::scalar(0.0)
    } else {
        infonce_loss(&img_pairs, &txt_pairs, queue, &align_cfg)?
    };

    let tf = if gap_terms.is_empty() {
        Tensor::scalar(0.0)
    } else {
        Tensor::concat(&gap_terms).mean()
    };

    let gac = link_prediction_loss(graph_embeddings, held_out_pairs, model.dims.graph_nodes, rng)?;
    let sup = Tensor::concat(&sup_terms).mean();

    Ok(BatchAssembly {
        cm,
        tf,
        gac,
        sup,
        probas,
        labels,
        proba_tensors,
    })
}

/// Binary cross-entropy link prediction over held-out co-occurrence
/// pairs against an equal number of sampled non-pairs.
fn link_prediction_loss(
    embeddings: &Tensor,
    positives: &[(usize, usize)],
    n_nodes: usize,
    rng: &mut Rng,
) -> Result<Tensor> {
    if positives.is_empty() || n_nodes < 2 {
        return Ok(Tensor::scalar(0.0));
    }
    let scale = 1.0 / libm::sqrt(embeddings.shape()[1] as f64);
    let mut terms = Vec::with_capacity(positives.len() * 2);
    for &(a, b) in positives {
        let score = embeddings
            .select_row(a)
            .dot(&embeddings.select_row(b))
            .mul_scalar(scale);
        terms.push(score.sigmoid().clamp_min(1e-12).ln().neg());

        let (mut x, mut y) = (rng.below(n_nodes), rng.below(n_nodes));
        if x == y {
            y = (y + 1) % n_nodes;
        }
        if positives.contains(&(x, y)) || positives.contains(&(y, x)) {
            x = (x + 1) % n_nodes;
        }
        let neg_score = embeddings
            .select_row(x)
            .dot(&embeddings.select_row(y))
            .mul_scalar(scale);
        terms.push(
            neg_score
                .sigmoid()
                .neg()
                .add_scalar(1.0)
                .clamp_min(1e-12)
                .ln()
                .neg(),
        );
    }
    Ok(Tensor::concat(&terms).mean())
}

// ---- metrics row --------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One row of the per-epoch metrics log.
#[derive(Clone, Debug)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: Split,
    pub loss_total: f64,
    pub loss_cm: f64,
    pub loss_tf: f64,
    pub loss_gac: f64,
    pub loss_sup: f64,
    pub auroc: f64,
    pub ece: f64,
    pub act: f64,
    pub reward: f64,
}

fn metrics_from(
    probas: &[Vec<f64>],
    labels: &[usize],
    table: &ActionTable,
    top_k: usize,
    act_threshold: f64,
    weights: &RewardWeights,
) -> Result<(f64, f64, f64, f64)> {
    let auroc = match auroc_macro(probas, labels) {
        Ok(a) => a,
        Err(CoreError::SingleClassLabels) => 0.5,
        Err(e) => return Err(e),
    };
    let ece_v = ece(probas, labels, 10)?;
    let bundles: Vec<PredictionBundle> = probas
        .iter()
        .map(|p| build_bundle(p.clone(), 0.0, table, top_k, f64::INFINITY))
        .collect::<Result<_>>()?;
    let act = actionability(&bundles, table, act_threshold);
    let reward = composite_reward(auroc, ece_v, act, weights)?;
    Ok((auroc, ece_v, act, reward))
}

// ---- the training loop ----------------------------------------------------

/// Patient-level split indices.
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded 70/15/15-style patient split.
pub fn split_cohort(n: usize, cfg: &TrainConfig, rng: &Rng) -> Result<SplitIndices> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.child(0x5917).shuffle(&mut order);
    let n_val = libm::round(n as f64 * cfg.val_fraction) as usize;
    let n_test = libm::round(n as f64 * cfg.test_fraction) as usize;
    let n_train = n.saturating_sub(n_val + n_test);
    if n_train == 0 {
        return Err(CoreError::EmptySplit("train"));
    }
    if n_val == 0 {
        return Err(CoreError::EmptySplit("val"));
    }
    if n_test == 0 {
        return Err(CoreError::EmptySplit("test"));
    }
    Ok(SplitIndices {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    })
}

/// A finished training run.
pub struct TrainOutcome {
    pub model: RiskModel,
    pub graph: DiseaseGraph,
    pub held_out_pairs: Vec<(usize, usize)>,
    pub metrics: Vec<EpochMetrics>,
    pub optimizer: Optimizer,
    pub baseline: Baseline,
    pub rng: Rng,
    pub epochs_done: usize,
    pub split: SplitIndices,
}

struct EpochAccumulator {
    total: f64,
    cm: f64,
    tf: f64,
    gac: f64,
    sup: f64,
    steps: usize,
    probas: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl EpochAccumulator {
    fn new() -> EpochAccumulator {
        EpochAccumulator {
            total: 0.0,
            cm: 0.0,
            tf: 0.0,
            gac: 0.0,
            sup: 0.0,
            steps: 0,
            probas: Vec::new(),
            labels: Vec::new(),
        }
    }

    fn push(&mut self, assembly: &BatchAssembly, total: f64) {
        self.total += total;
        self.cm += assembly.cm.item();
        self.tf += assembly.tf.item();
        self.gac += assembly.gac.item();
        self.sup += assembly.sup.item();
        self.steps += 1;
        self.probas.extend(assembly.probas.iter().cloned());
        self.labels.extend(assembly.labels.iter().copied());
    }

    fn row(
        &self,
        epoch: usize,
        split: Split,
        table: &ActionTable,
        top_k: usize,
        act_threshold: f64,
        weights: &RewardWeights,
    ) -> Result<EpochMetrics> {
        let n = self.steps.max(1) as f64;
        let (auroc, ece_v, act, reward) =
            metrics_from(&self.probas, &self.labels, table, top_k, act_threshold, weights)?;
        Ok(EpochMetrics {
            epoch,
            split,
            loss_total: self.total / n,
            loss_cm: self.cm / n,
            loss_tf: self.tf / n,
            loss_gac: self.gac / n,
            loss_sup: self.sup / n,
            auroc,
            ece: ece_v,
            act,
            reward,
        })
    }
}

/// Train the full pipeline on a cohort: supervised epochs, temperature
/// fitting and review-threshold calibration on validation, then
/// policy-gradient epochs. Emits one metrics row per epoch per split
/// plus a final test row.
pub fn train(cohort: &[PatientRecord], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cohort.is_empty() {
        return Err(CoreError::EmptyInput("cohort"));
    }
    let truncated: Vec<PatientRecord> = match cfg.max_visits {
        Some(k) => cohort.iter().map(|p| p.truncate_history(k)).collect(),
        None => cohort.to_vec(),
    };

    let root = Rng::new(cfg.seed);
    let split = split_cohort(truncated.len(), cfg, &root)?;
    let train_set: Vec<&PatientRecord> = split.train.iter().map(|&i| &truncated[i]).collect();
    let val_set: Vec<&PatientRecord> = split.val.iter().map(|&i| &truncated[i]).collect();
    let test_set: Vec<&PatientRecord> = split.test.iter().map(|&i| &truncated[i]).collect();

    // co-occurrence statistics come from the training split only
    let n_codes = truncated
        .iter()
        .flat_map(|p| p.visits.iter())
        .flat_map(|v| v.dx.iter())
        .map(|&c| c as usize + 1)
        .max()
        .unwrap_or(1);
    let train_records: Vec<PatientRecord> = train_set.iter().map(|p| (*p).clone()).collect();
    let (graph, held_out_pairs) =
        build_graph_from_cohort(&train_records, n_codes, n_codes.div_ceil(4).max(1))?;

    let dims = DataDims::from_cohort(&truncated, graph.n_nodes())?;
    let mut init_rng = root.child(0x1417);
    let mut model = RiskModel::new(&cfg.model, dims, &mut init_rng)?;
    let table = ActionTable::clinical_default(dims.classes);

    let mut queue = NegativeQueue::new(cfg.model.queue_capacity);
    let mut optimizer = Optimizer::from_config(cfg);
    let mut baseline = Baseline::new(cfg.reward_weights.baseline_decay);
    let mut rng = root.child(0x7EA1);
    let params = model.parameters();
    let mut metrics: Vec<EpochMetrics> = Vec::new();

    let total_epochs = cfg.epochs + cfg.rl_epochs;
    for epoch in 0..total_epochs {
        let rl_phase = epoch >= cfg.epochs;
        if rl_phase && epoch == cfg.epochs {
            // phase boundary: fit calibration and the review threshold
            calibrate(&mut model, &graph, &val_set, &mut rng)?;
            optimizer.set_lr(cfg.lr_rl);
        }
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        rng.shuffle(&mut order);
        let mut accum = EpochAccumulator::new();

        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&PatientRecord> = chunk.iter().map(|&i| train_set[i]).collect();
            let graph_embeddings = model.graph_embeddings(&graph)?;
            let temperature = if rl_phase { model.head.temperature } else { 1.0 };
            let assembly = assemble_batch(
                &model,
                &graph_embeddings,
                &batch,
                &queue,
                &held_out_pairs,
                true,
                temperature,
                &mut rng,
            )?;

            let rl_term = if rl_phase && cfg.loss_weights.lambda_rl > 0.0 {
                let (auroc, ece_v, act, _) = metrics_from(
                    &assembly.probas,
                    &assembly.labels,
                    &table,
                    cfg.model.top_k_actions,
                    cfg.model.act_threshold,
                    &cfg.reward_weights,
                )?;
                let reward = composite_reward(auroc, ece_v, act, &cfg.reward_weights)?;
                let advantage = reward - baseline.value;
                baseline.update(reward);
                let log_probs: Vec<Tensor> = assembly
                    .proba_tensors
                    .iter()
                    .map(|p| {
                        let action = rng.categorical(&p.values());
                        p.element(action).clamp_min(1e-12).ln()
                    })
                    .collect();
                Tensor::concat(&log_probs).mean().mul_scalar(-advantage)
            } else {
                Tensor::scalar(0.0)
            };

            let total = total_loss(
                &assembly.cm,
                &assembly.tf,
                &assembly.gac,
                &assembly.sup,
                &rl_term,
                &cfg.loss_weights,
            )?;
            let total_value = total.item();
            if !total_value.is_finite() {
                return Err(CoreError::Diverged { epoch, step });
            }

            Sgd::zero_grads(&params);
            total.backward()?;
            optimizer.step(&params);
            model.encoders.momentum_update()?;
            for patient in &batch {
                queue.enqueue_batch(&model.momentum_text_embeddings(patient)?)?;
            }
            accum.push(&assembly, total_value);
        }

        metrics.push(accum.row(
            epoch,
            Split::Train,
            &table,
            cfg.model.top_k_actions,
            cfg.model.act_threshold,
            &cfg.reward_weights,
        )?);
        metrics.push(eval_row(
            epoch,
            Split::Val,
            &model,
            &graph,
            &val_set,
            &queue,
            &held_out_pairs,
            &table,
            cfg,
            &mut rng,
        )?);
    }

    if cfg.rl_epochs == 0 {
        calibrate(&mut model, &graph, &val_set, &mut rng)?;
    }
    metrics.push(eval_row(
        total_epochs,
        Split::Test,
        &model,
        &graph,
        &test_set,
        &queue,
        &held_out_pairs,
        &table,
        cfg,
        &mut rng,
    )?);

    Ok(TrainOutcome {
        model,
        graph,
        held_out_pairs,
        metrics,
        optimizer,
        baseline,
        rng,
        epochs_done: total_epochs,
        split,
    })
}

/// Fit the softmax temperature on validation logits, then set the
/// review threshold at the 90th percentile of validation uncertainty.
fn calibrate(
    model: &mut RiskModel,
    graph: &DiseaseGraph,
    val_set: &[&PatientRecord],
    rng: &mut Rng,
) -> Result<()> {
    if val_set.is_empty() {
        return Err(CoreError::EmptySplit("val"));
    }
    let graph_embeddings = model.graph_embeddings(graph)?;
    let mut logits = Vec::with_capacity(val_set.len());
    let mut labels = Vec::with_capacity(val_set.len());
    let mut states = Vec::with_capacity(val_set.len());
    for patient in val_set {
        let mut opts = ForwardOptions {
            dropout: false,
            rng,
            temperature: 1.0,
        };
        let fwd = model.forward(patient, &graph_embeddings, &mut opts)?;
        logits.push(fwd.logits.to_vec());
        labels.push(patient.label);
        states.push(fwd.summary_state.detach());
    }
    model.head.temperature = fit_temperature(&logits, &labels)?;
    let uncertainties: Vec<f64> = states
        .iter()
        .zip(val_set)
        .map(|(state, patient)| {
            let mut child = rng.child(0xAB00 + patient.patient_id);
            model.head.mc_uncertainty(state, &mut child)
        })
        .collect::<Result<_>>()?;
    model.review_threshold = percentile(&uncertainties, 0.9);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval_row(
    epoch: usize,
    split: Split,
    model: &RiskModel,
    graph: &DiseaseGraph,
    patients: &[&PatientRecord],
    queue: &NegativeQueue,
    held_out_pairs: &[(usize, usize)],
    table: &ActionTable,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<EpochMetrics> {
    if patients.is_empty() {
        return Err(CoreError::EmptySplit(split.as_str()));
    }
    let graph_embeddings = model.graph_embeddings(graph)?;
    let assembly = assemble_batch(
        model,
        &graph_embeddings,
        patients,
        queue,
        held_out_pairs,
        false,
        model.head.temperature,
        rng,
    )?;
    let mut accum = EpochAccumulator::new();
    let total = total_loss(
        &assembly.cm,
        &assembly.tf,
        &assembly.gac,
        &assembly.sup,
        &Tensor::scalar(0.0),
        &cfg.loss_weights,
    )?;
    accum.push(&assembly, total.item());
    accum.row(
        epoch,
        split,
        table,
        cfg.model.top_k_actions,
        cfg.model.act_threshold,
        &cfg.reward_weights,
    )
}

/// Finite-difference check of `coords` randomly sampled parameters of a
/// fully assembled (small) model against the joint supervised loss.
/// Every stage of the pipeline sits on the gradient path.
pub fn full_pipeline_check(seed: u64, coords: usize) -> Result<crate::gradcheck::GradReport> {
    use crate::cohort::{generate_cohort, CohortConfig};
    use crate::config::ModelConfig;
    use crate::model::DataDims;

    let cohort = generate_cohort(&CohortConfig {
        n_patients: 6,
        max_visits: 3,
        seed: seed ^ 0x9E37,
        ..CohortConfig::default()
    })?;
    let (graph, held_out) = build_graph_from_cohort(&cohort, 24, 6)?;
    let model_cfg = ModelConfig {
        d_model: 12,
        img_hidden: 10,
        txt_embed: 6,
        txt_hidden: 10,
        decoder_layers: 2,
        decoder_heads: 2,
        decoder_ffn: 20,
        d_graph: 6,
        graph_layers: 2,
        ..ModelConfig::default()
    };
    let dims = DataDims::from_cohort(&cohort, graph.n_nodes())?;
    let mut init = Rng::new(seed);
    let model = RiskModel::new(&model_cfg, dims, &mut init)?;
    let mut queue = NegativeQueue::new(64);
    for p in &cohort {
        queue.enqueue_batch(&model.momentum_text_embeddings(p)?)?;
    }
    let weights = LossWeights {
        lambda_time: 0.5,
        lambda_graph: 0.5,
        lambda_sup: 1.0,
        lambda_rl: 0.0,
    };
    let params = model.parameters();
    let batch: Vec<&PatientRecord> = cohort.iter().collect();
    let loss_fn = || {
        let emb = model.graph_embeddings(&graph)?;
        // fresh dropout/link-sampling stream per rebuild
        let mut rng = Rng::new(seed ^ 0x51CA);
        let a = assemble_batch(&model, &emb, &batch, &queue, &held_out, true, 1.0, &mut rng)?;
        total_loss(&a.cm, &a.tf, &a.gac, &a.sup, &Tensor::scalar(0.0), &weights)
    };
    let mut pick = Rng::new(seed ^ 0xC0DE);
    crate::gradcheck::check_sampled(loss_fn, &params, coords, &mut pick, crate::gradcheck::FD_STEP)
}

/// Evaluation artifacts for a patient set.
pub struct Evaluation {
    pub bundles: Vec<PredictionBundle>,
    pub patient_ids: Vec<u64>,
    pub probas: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub auroc: f64,
    pub ece: f64,
    pub act: f64,
    pub reward: f64,
}

/// Full inference pass: calibrated probabilities, dropout-sampled
/// uncertainty (child stream per patient id), recommendations, and the
/// aggregate metrics.
pub fn evaluate(
    model: &RiskModel,
    graph: &DiseaseGraph,
    patients: &[&PatientRecord],
    table: &ActionTable,
    weights: &RewardWeights,
    top_k: usize,
    act_threshold: f64,
    eval_seed: u64,
) -> Result<Evaluation> {
    if patients.is_empty() {
        return Err(CoreError::EmptyInput("evaluation set"));
    }
    let graph_embeddings = model.graph_embeddings(graph)?;
    let base = Rng::new(eval_seed);
    let mut bundles = Vec::with_capacity(patients.len());
    let mut probas = Vec::with_capacity(patients.len());
    let mut labels = Vec::with_capacity(patients.len());
    let mut patient_ids = Vec::with_capacity(patients.len());
    for patient in patients {
        let mut forward_rng = base.child(patient.patient_id);
        let mut opts = ForwardOptions {
            dropout: false,
            rng: &mut forward_rng,
            temperature: model.head.temperature,
        };
        let fwd = model.forward(patient, &graph_embeddings, &mut opts)?;
        let mut mc_rng = base.child(0xAB00 + patient.patient_id);
        let uncertainty = model.head.mc_uncertainty(&fwd.summary_state, &mut mc_rng)?;
        let proba = fwd.proba.to_vec();
        bundles.push(build_bundle(
            proba.clone(),
            uncertainty,
            table,
            top_k,
            model.review_threshold,
        )?);
        probas.push(proba);
        labels.push(patient.label);
        patient_ids.push(patient.patient_id);
    }
    let auroc = match auroc_macro(&probas, &labels) {
        Ok(a) => a,
        Err(CoreError::SingleClassLabels) => 0.5,
        Err(e) => return Err(e),
    };
    let ece_v = ece(&probas, &labels, 10)?;
    let act = actionability(&bundles, table, act_threshold);
    let reward = composite_reward(auroc, ece_v, act, weights)?;
    Ok(Evaluation {
        bundles,
        patient_ids,
        probas,
        labels,
        auroc,
        ece: ece_v,
        act,
        reward,
    })
}
