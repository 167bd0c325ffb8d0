//! Full pipeline assembly: encoders, time-aware fusion, causal
//! decoding, graph injection, and the risk head, wired for a single
//! patient forward pass.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::cohort::PatientRecord;
use crate::config::ModelConfig;
use crate::encoders::EncoderPair;
use crate::error::{CoreError, Result};
use crate::graph::{DiseaseGraph, OntologyAdapter};
use crate::risk::RiskHead;
use crate::rng::Rng;
use crate::temporal::{CausalDecoder, CrossFusion, TimeEncoder};
use crate::tensor::Tensor;

/// Data-dependent dimensions the architecture must match.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DataDims {
    pub d_img: usize,
    pub vocab: usize,
    pub classes: usize,
    pub graph_nodes: usize,
}

impl DataDims {
    /// Scan a cohort for its feature widths and label count.
    pub fn from_cohort(cohort: &[PatientRecord], graph_nodes: usize) -> Result<DataDims> {
        let first_visit = cohort
            .iter()
            .flat_map(|p| p.visits.first())
            .next()
            .ok_or(CoreError::EmptyInput("cohort"))?;
        let d_img = first_visit.img.len();
        let vocab = cohort
            .iter()
            .flat_map(|p| p.visits.iter())
            .flat_map(|v| v.tokens.iter())
            .map(|&t| t as usize + 1)
            .max()
            .unwrap_or(1)
            .max(8);
        let classes = cohort.iter().map(|p| p.label + 1).max().unwrap_or(2).max(2);
        Ok(DataDims {
            d_img,
            vocab,
            classes,
            graph_nodes,
        })
    }
}

/// Everything the per-patient forward pass produces.
pub struct PatientForward {
    /// Main-branch image embedding per visit.
    pub img_embeddings: Vec<Tensor>,
    /// Main-branch text embedding per visit.
    pub txt_embeddings: Vec<Tensor>,
    /// Injected per-visit sequence states.
    pub visit_states: Vec<Tensor>,
    /// Injected whole-history summary state.
    pub summary_state: Tensor,
    /// Per-class scores from the risk head.
    pub logits: Tensor,
    /// Softmax of the logits at the requested temperature.
    pub proba: Tensor,
    /// Predicted compressed gap to the next visit, one per transition.
    pub gap_predictions: Vec<Tensor>,
}

/// Forward-pass switches.
pub struct ForwardOptions<'a> {
    /// Apply dropout before the risk head (training only).
    pub dropout: bool,
    pub rng: &'a mut Rng,
    /// Softmax temperature for `proba` (training uses 1).
    pub temperature: f64,
}

/// The assembled risk model.
pub struct RiskModel {
    pub config: ModelConfig,
    pub dims: DataDims,
    pub encoders: EncoderPair,
    pub time_encoder: TimeEncoder,
    pub fusion: CrossFusion,
    pub decoder: CausalDecoder,
    pub ontology: OntologyAdapter,
    pub head: RiskHead,
    /// Next-gap regression head over the injected visit states.
    pub gap_weight: Tensor,
    pub gap_bias: Tensor,
    /// Uncertainty level above which predictions are flagged for
    /// review; fitted on the validation split after training.
    pub review_threshold: f64,
    /// When set, the graph pathway is severed entirely (ablation).
    pub gate_clamped: bool,
}

impl RiskModel {
    pub fn new(config: &ModelConfig, dims: DataDims, rng: &mut Rng) -> Result<RiskModel> {
        let encoders = EncoderPair::new(
            dims.d_img,
            dims.vocab,
            config.txt_embed,
            config.img_hidden,
            config.txt_hidden,
            config.d_model,
            config.momentum_beta,
            rng,
        )?;
        let time_encoder = TimeEncoder::new(config.d_model, rng);
        let fusion = CrossFusion::new(config.d_model, rng);
        let decoder = CausalDecoder::new(
            config.d_model,
            config.decoder_layers,
            config.decoder_heads,
            config.decoder_ffn,
            rng,
        )?;
        let ontology = OntologyAdapter::new(
            dims.graph_nodes,
            config.d_graph,
            config.graph_layers,
            config.d_model,
            rng,
        );
        let head = RiskHead::new(
            dims.classes,
            config.d_model,
            config.dropout,
            config.mc_samples,
            rng,
        );
        Ok(RiskModel {
            config: config.clone(),
            dims,
            encoders,
            time_encoder,
            fusion,
            decoder,
            ontology,
            head,
            gap_weight: Tensor::param_uniform(&[config.d_model], config.d_model, rng),
            gap_bias: Tensor::param_uniform(&[1], config.d_model, rng),
            review_threshold: f64::INFINITY,
            gate_clamped: false,
        })
    }

    /// Graph embeddings after attention propagation; recomputed once
    /// per optimization step and shared across the batch.
    pub fn graph_embeddings(&self, graph: &DiseaseGraph) -> Result<Tensor> {
        self.ontology.propagate(graph)
    }

    /// Full forward pass for one (possibly truncated) patient record.
    pub fn forward(
        &self,
        patient: &PatientRecord,
        graph_embeddings: &Tensor,
        opts: &mut ForwardOptions<'_>,
    ) -> Result<PatientForward> {
        let mut img_embeddings = Vec::with_capacity(patient.visits.len());
        let mut txt_embeddings = Vec::with_capacity(patient.visits.len());
        let mut fused = Vec::with_capacity(patient.visits.len());
        for visit in &patient.visits {
            let img = self.encoders.image.encode(&visit.img)?;
            let txt = self.encoders.text.encode(&visit.tokens)?;
            let time = self.time_encoder.encode(visit.delta_t)?;
            fused.push(self.fusion.fuse(&img, &txt, &time)?);
            img_embeddings.push(img);
            txt_embeddings.push(txt);
        }
        let decoded = self.decoder.decode(&fused)?;

        let dx = patient.distinct_dx();
        let injected: Vec<Tensor>;
        let summary;
        if self.gate_clamped {
            injected = (0..decoded.visits).map(|t| decoded.visit_state(t)).collect();
            summary = decoded.summary_state();
        } else {
            let aggregate = self.ontology.aggregate(graph_embeddings, &dx);
            let graph_vec = self.ontology.project(&aggregate);
            injected = (0..decoded.visits)
                .map(|t| self.ontology.inject(&decoded.visit_state(t), &graph_vec))
                .collect::<Result<_>>()?;
            summary = self.ontology.inject(&decoded.summary_state(), &graph_vec)?;
        }

        let head_input = summary.dropout(self.config.dropout, opts.rng, opts.dropout)?;
        let logits = self.head.logits(&head_input)?;
        let proba = self.head.calibrated_proba(&logits, opts.temperature)?;

        let gap_predictions = injected
            .iter()
            .take(injected.len().saturating_sub(1))
            .map(|h| self.gap_weight.dot(h).add(&self.gap_bias))
            .collect();

        Ok(PatientForward {
            img_embeddings,
            txt_embeddings,
            visit_states: injected,
            summary_state: summary,
            logits,
            proba,
            gap_predictions,
        })
    }

    /// Momentum-branch text embeddings for the queue (detached).
    pub fn momentum_text_embeddings(&self, patient: &PatientRecord) -> Result<Vec<Tensor>> {
        patient
            .visits
            .iter()
            .map(|v| self.encoders.momentum_text.encode(&v.tokens))
            .collect()
    }

    /// Gradient-tracked parameters in a fixed, name-stable order.
    pub fn parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = self.encoders.parameters();
        out.extend(self.time_encoder.parameters());
        out.extend(self.fusion.parameters());
        out.extend(self.decoder.parameters());
        out.extend(self.ontology.parameters());
        out.extend(self.head.parameters());
        out.push(("gap.weight".into(), self.gap_weight.clone()));
        out.push(("gap.bias".into(), self.gap_bias.clone()));
        out
    }

    /// Momentum (non-gradient) parameters, checkpointed alongside.
    pub fn momentum_parameters(&self) -> Vec<(String, Tensor)> {
        self.encoders.momentum_parameters()
    }

    /// Overwrite parameter values from a name-indexed map; every name
    /// must resolve with a matching shape.
    pub fn load_values(&self, values: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        let mut all = self.parameters();
        all.extend(self.momentum_parameters());
        for (name, tensor) in all {
            let stored = values.get(&name).ok_or_else(|| CoreError::ParameterMismatch {
                detail: alloc::format!("missing parameter `{name}`"),
            })?;
            if stored.len() != tensor.len() {
                return Err(CoreError::ParameterMismatch {
                    detail: alloc::format!(
                        "parameter `{name}` has {} values, expected {}",
                        stored.len(),
                        tensor.len()
                    ),
                });
            }
            tensor.update_values(|v| v.copy_from_slice(stored));
        }
        Ok(())
    }
}
