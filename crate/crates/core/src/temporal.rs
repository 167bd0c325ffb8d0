//! Irregular-interval time encoding, per-visit cross-attention fusion,
//! and the strictly causal sequence decoder.
//!
//! The decoder appends a learned summary token at the END of the
//! sequence: under a causal mask that is the only position that sees
//! the whole history. Causality is structural — the attention primitive
//! never reads future rows — so perturbing visit `t+1` leaves states up
//! to `t` bitwise unchanged.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Learnable encoding of the gap since the previous visit. The raw
/// features are `[sin(w dt), cos(w dt), dt, log(1 + dt)]`: a periodic
/// pair for seasonal structure, the linear gap, and a compressed gap
/// that keeps multi-year intervals from saturating. The frequency is
/// kept positive through `w = exp(log_freq)`.
pub struct TimeEncoder {
    pub weight: Tensor,
    pub bias: Tensor,
    pub log_freq: Tensor,
}

/// Days per year; the frequency starts at one annual cycle.
const INIT_PERIOD_DAYS: f64 = 365.0;

impl TimeEncoder {
    pub fn new(d_model: usize, rng: &mut Rng) -> TimeEncoder {
        // The four features span wildly different ranges: the periodic
        // pair lives in [-1, 1] while the raw gap reaches hundreds of
        // days. The day-scaled columns start proportionally small so
        // every feature contributes O(1) at init; training reweighs
        // them freely afterwards.
        let bound = 0.5; // 1/sqrt(4)
        let col_scale = [1.0, 1.0, 1.0 / INIT_PERIOD_DAYS, 0.25];
        let values = (0..d_model * 4)
            .map(|i| rng.uniform(-bound, bound) * col_scale[i % 4])
            .collect();
        TimeEncoder {
            weight: Tensor::param(&[d_model, 4], values),
            bias: Tensor::param_uniform(&[d_model], 4, rng),
            log_freq: Tensor::param(
                &[1],
                alloc::vec![libm::log(core::f64::consts::TAU / INIT_PERIOD_DAYS)],
            ),
        }
    }

    pub fn frequency(&self) -> f64 {
        libm::exp(self.log_freq.value_at(0))
    }

    /// Raw four-dimensional feature vector for a gap, before projection.
    pub fn features(&self, delta_t: f64) -> Result<Tensor> {
        if delta_t < 0.0 || !delta_t.is_finite() {
            return Err(CoreError::MetricDomain {
                context: "visit gap (days)",
                got: delta_t,
            });
        }
        let phase = self.log_freq.exp().mul_scalar(delta_t);
        Ok(Tensor::concat(&[
            phase.sin(),
            phase.cos(),
            Tensor::scalar(delta_t),
            Tensor::scalar(libm::log1p(delta_t)),
        ]))
    }

    pub fn encode(&self, delta_t: f64) -> Result<Tensor> {
        let f = self.features(delta_t)?;
        Ok(self.weight.matvec(&f).add(&self.bias))
    }

    pub fn parameters(&self) -> Vec<(String, Tensor)> {
        alloc::vec![
            ("time.weight".into(), self.weight.clone()),
            ("time.bias".into(), self.bias.clone()),
            ("time.log_freq".into(), self.log_freq.clone()),
        ]
    }
}

/// Single-head fusion of one visit: the query is image + time, the
/// key/value set is the three modality vectors, and the attended value
/// is projected and added back onto the query.
pub struct CrossFusion {
    pub proj: Tensor,
    pub proj_bias: Tensor,
}

impl CrossFusion {
    pub fn new(d_model: usize, rng: &mut Rng) -> CrossFusion {
        CrossFusion {
            proj: Tensor::param_uniform(&[d_model, d_model], d_model, rng),
            proj_bias: Tensor::param_uniform(&[d_model], d_model, rng),
        }
    }

    /// Scaled dot-product attention of a query over arbitrary rows
    /// (rows serve as both keys and values), then `query + proj(att)`.
    pub fn attend(&self, query: &Tensor, rows: &[Tensor]) -> Result<Tensor> {
        if rows.is_empty() {
            return Err(CoreError::EmptyInput("attention rows"));
        }
        let d = query.len();
        for r in rows {
            if r.len() != d {
                return Err(CoreError::LengthMismatch {
                    context: "cross attention row",
                    expected: d,
                    got: r.len(),
                });
            }
        }
        let keys = Tensor::stack_rows(rows);
        let scores = keys.matvec(query).mul_scalar(1.0 / libm::sqrt(d as f64));
        let weights = scores.softmax_rows(1.0)?;
        let attended = keys.transpose().matvec(&weights);
        Ok(query.add(&self.proj.matvec(&attended).add(&self.proj_bias)))
    }

    /// Fuse one visit's modality vectors into its sequence state.
    pub fn fuse(&self, img: &Tensor, txt: &Tensor, time: &Tensor) -> Result<Tensor> {
        if img.len() != txt.len() || img.len() != time.len() {
            return Err(CoreError::LengthMismatch {
                context: "fusion inputs",
                expected: img.len(),
                got: txt.len().max(time.len()),
            });
        }
        let query = img.add(time);
        self.attend(&query, &[img.clone(), txt.clone(), time.clone()])
    }

    pub fn parameters(&self) -> Vec<(String, Tensor)> {
        alloc::vec![
            ("fusion.proj".into(), self.proj.clone()),
            ("fusion.proj_bias".into(), self.proj_bias.clone()),
        ]
    }
}

struct DecoderLayer {
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    ln1_gain: Tensor,
    ln1_bias: Tensor,
    ln2_gain: Tensor,
    ln2_bias: Tensor,
    ffn_w1: Tensor,
    ffn_b1: Tensor,
    ffn_w2: Tensor,
    ffn_b2: Tensor,
}

impl DecoderLayer {
    fn new(d: usize, ffn: usize, rng: &mut Rng) -> DecoderLayer {
        DecoderLayer {
            wq: Tensor::param_uniform(&[d, d], d, rng),
            wk: Tensor::param_uniform(&[d, d], d, rng),
            wv: Tensor::param_uniform(&[d, d], d, rng),
            wo: Tensor::param_uniform(&[d, d], d, rng),
            // normalization starts as the identity map
            ln1_gain: Tensor::param(&[d], alloc::vec![1.0; d]),
            ln1_bias: Tensor::param(&[d], alloc::vec![0.0; d]),
            ln2_gain: Tensor::param(&[d], alloc::vec![1.0; d]),
            ln2_bias: Tensor::param(&[d], alloc::vec![0.0; d]),
            ffn_w1: Tensor::param_uniform(&[d, ffn], d, rng),
            ffn_b1: Tensor::param_uniform(&[ffn], d, rng),
            ffn_w2: Tensor::param_uniform(&[ffn, d], ffn, rng),
            ffn_b2: Tensor::param_uniform(&[d], ffn, rng),
        }
    }

    fn params(&self) -> [(&'static str, &Tensor); 12] {
        [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
            ("ffn_w1", &self.ffn_w1),
            ("ffn_b1", &self.ffn_b1),
            ("ffn_w2", &self.ffn_w2),
            ("ffn_b2", &self.ffn_b2),
        ]
    }
}

/// Row-wise layer normalization with learned gain and bias.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Tensor {
    let mu = x.row_mean();
    let centered = x.sub_col(&mu);
    let var = centered.mul(&centered).row_mean();
    let std = var.add_scalar(1e-5).sqrt();
    centered.div_col(&std).mul_vec_row(gain).add_vec_row(bias)
}

/// Decoded sequence: per-visit causal states plus the summary state.
pub struct DecodedSequence {
    /// All states, `(visits + 1) x d_model`; the last row is the summary.
    pub states: Tensor,
    pub visits: usize,
}

impl DecodedSequence {
    /// Causal state of visit `t` (depends only on visits `0..=t`).
    pub fn visit_state(&self, t: usize) -> Tensor {
        self.states.select_row(t)
    }

    /// Whole-history summary state (the appended token's output).
    pub fn summary_state(&self) -> Tensor {
        self.states.select_row(self.visits)
    }
}

/// Pre-norm causal transformer over fused visit states with a trailing
/// learned summary token.
pub struct CausalDecoder {
    layers: Vec<DecoderLayer>,
    pub summary_token: Tensor,
    final_gain: Tensor,
    final_bias: Tensor,
    heads: usize,
}

impl CausalDecoder {
    pub fn new(d_model: usize, layers: usize, heads: usize, ffn: usize, rng: &mut Rng) -> Result<CausalDecoder> {
        if heads == 0 || d_model % heads != 0 {
            return Err(CoreError::InvalidConfig(format!(
                "decoder heads ({heads}) must divide d_model ({d_model})"
            )));
        }
        Ok(CausalDecoder {
            layers: (0..layers).map(|_| DecoderLayer::new(d_model, ffn, rng)).collect(),
            summary_token: Tensor::param_uniform(&[d_model], d_model, rng),
            final_gain: Tensor::param(&[d_model], alloc::vec![1.0; d_model]),
            final_bias: Tensor::param(&[d_model], alloc::vec![0.0; d_model]),
            heads,
        })
    }

    /// Run the masked decoder over the fused visit vectors.
    pub fn decode(&self, fused: &[Tensor]) -> Result<DecodedSequence> {
        if fused.is_empty() {
            return Err(CoreError::EmptyInput("decoder input sequence"));
        }
        let mut rows: Vec<Tensor> = fused.to_vec();
        rows.push(self.summary_token.clone());
        let mut x = Tensor::stack_rows(&rows);
        for layer in &self.layers {
            let normed = layer_norm(&x, &layer.ln1_gain, &layer.ln1_bias);
            let q = normed.matmul(&layer.wq);
            let k = normed.matmul(&layer.wk);
            let v = normed.matmul(&layer.wv);
            let att = Tensor::causal_attention(&q, &k, &v, self.heads);
            x = x.add(&att.matmul(&layer.wo));

            let normed = layer_norm(&x, &layer.ln2_gain, &layer.ln2_bias);
            let h = normed.matmul(&layer.ffn_w1).add_vec_row(&layer.ffn_b1).relu();
            x = x.add(&h.matmul(&layer.ffn_w2).add_vec_row(&layer.ffn_b2));
        }
        let states = layer_norm(&x, &self.final_gain, &self.final_bias);
        Ok(DecodedSequence {
            states,
            visits: fused.len(),
        })
    }

    /// First-layer attention weights over the (sequence + summary)
    /// positions, one full matrix per head with exact zeros above the
    /// diagonal. Values only — an inspection surface, not a grad path.
    pub fn attention_weights(&self, fused: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        if fused.is_empty() {
            return Err(CoreError::EmptyInput("decoder input sequence"));
        }
        let layer = match self.layers.first() {
            Some(l) => l,
            None => return Ok(Vec::new()),
        };
        let mut rows: Vec<Tensor> = fused.to_vec();
        rows.push(self.summary_token.clone());
        let x = Tensor::stack_rows(&rows);
        let normed = layer_norm(&x, &layer.ln1_gain, &layer.ln1_bias);
        let q = normed.matmul(&layer.wq);
        let k = normed.matmul(&layer.wk);
        let n = rows.len();
        let d = q.shape()[1];
        let dh = d / self.heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let qv = q.to_vec();
        let kv = k.to_vec();
        let mut out = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let c0 = h * dh;
            let mut mat = alloc::vec![0.0; n * n];
            for t in 0..n {
                let mut scores: Vec<f64> = (0..=t)
                    .map(|j| {
                        (0..dh)
                            .map(|c| qv[t * d + c0 + c] * kv[j * d + c0 + c])
                            .sum::<f64>()
                            * scale
                    })
                    .collect();
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for s in scores.iter_mut() {
                    *s = libm::exp(*s - mx);
                    z += *s;
                }
                for (j, s) in scores.iter().enumerate() {
                    mat[t * n + j] = s / z;
                }
            }
            out.push(mat);
        }
        Ok(out)
    }

    pub fn parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, t) in layer.params() {
                out.push((format!("decoder.layer{i}.{name}"), t.clone()));
            }
        }
        out.push(("decoder.summary_token".into(), self.summary_token.clone()));
        out.push(("decoder.final_gain".into(), self.final_gain.clone()));
        out.push(("decoder.final_bias".into(), self.final_bias.clone()));
        out
    }
}
