//! Modality encoders and their slow-moving momentum copies.
//!
//! The image encoder is a two-layer perceptron over the raw feature
//! vector; the text encoder mean-pools token embeddings (tokens are
//! sorted first, so pooling is bitwise permutation-invariant) and runs
//! the pooled vector through a two-layer perceptron. Momentum copies
//! share shapes with the main encoders, never track gradients, and are
//! advanced only by exponential moving average.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// `D_img -> hidden -> d_model` perceptron.
pub struct ImageEncoder {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl ImageEncoder {
    pub fn new(d_img: usize, hidden: usize, d_model: usize, rng: &mut Rng) -> ImageEncoder {
        ImageEncoder {
            w1: Tensor::param_uniform(&[hidden, d_img], d_img, rng),
            b1: Tensor::param_uniform(&[hidden], d_img, rng),
            w2: Tensor::param_uniform(&[d_model, hidden], hidden, rng),
            b2: Tensor::param_uniform(&[d_model], hidden, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn encode(&self, features: &[f64]) -> Result<Tensor> {
        if features.len() != self.input_dim() {
            return Err(CoreError::LengthMismatch {
                context: "image features",
                expected: self.input_dim(),
                got: features.len(),
            });
        }
        let x = Tensor::vector(features.to_vec());
        let h = self.w1.matvec(&x).add(&self.b1).relu();
        Ok(self.w2.matvec(&h).add(&self.b2))
    }

    fn params(&self) -> Vec<&Tensor> {
        alloc::vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn detached_copy(&self) -> ImageEncoder {
        ImageEncoder {
            w1: self.w1.detach(),
            b1: self.b1.detach(),
            w2: self.w2.detach(),
            b2: self.b2.detach(),
        }
    }
}

/// Token embedding table, mean pool, then a two-layer perceptron.
pub struct TextEncoder {
    pub table: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl TextEncoder {
    pub fn new(
        vocab: usize,
        embed: usize,
        hidden: usize,
        d_model: usize,
        rng: &mut Rng,
    ) -> TextEncoder {
        TextEncoder {
            table: Tensor::param_uniform(&[vocab, embed], embed, rng),
            w1: Tensor::param_uniform(&[hidden, embed], embed, rng),
            b1: Tensor::param_uniform(&[hidden], embed, rng),
            w2: Tensor::param_uniform(&[d_model, hidden], hidden, rng),
            b2: Tensor::param_uniform(&[d_model], hidden, rng),
        }
    }

    pub fn vocab(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn encode(&self, tokens: &[u32]) -> Result<Tensor> {
        if tokens.is_empty() {
            return Err(CoreError::EmptyInput("token sequence"));
        }
        let vocab = self.vocab();
        let mut ids = Vec::with_capacity(tokens.len());
        for &t in tokens {
            if t as usize >= vocab {
                return Err(CoreError::TokenOutOfRange { id: t, vocab });
            }
            ids.push(t as usize);
        }
        // canonical order: pooling becomes exactly permutation-invariant
        ids.sort_unstable();
        let rows = Tensor::embedding_rows(&self.table, &ids);
        let pooled = rows.transpose().row_mean();
        let h = self.w1.matvec(&pooled).add(&self.b1).relu();
        Ok(self.w2.matvec(&h).add(&self.b2))
    }

    fn params(&self) -> Vec<&Tensor> {
        alloc::vec![&self.table, &self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn detached_copy(&self) -> TextEncoder {
        TextEncoder {
            table: self.table.detach(),
            w1: self.w1.detach(),
            b1: self.b1.detach(),
            w2: self.w2.detach(),
            b2: self.b2.detach(),
        }
    }
}

/// Main encoders plus their momentum copies and the EMA coefficient.
pub struct EncoderPair {
    pub image: ImageEncoder,
    pub text: TextEncoder,
    pub momentum_image: ImageEncoder,
    pub momentum_text: TextEncoder,
    pub beta: f64,
}

impl EncoderPair {
    pub fn new(
        d_img: usize,
        vocab: usize,
        embed: usize,
        img_hidden: usize,
        txt_hidden: usize,
        d_model: usize,
        beta: f64,
        rng: &mut Rng,
    ) -> Result<EncoderPair> {
        if !(0.0..1.0).contains(&beta) {
            return Err(CoreError::InvalidConfig(format!(
                "momentum beta must lie in [0, 1), got {beta}"
            )));
        }
        let image = ImageEncoder::new(d_img, img_hidden, d_model, rng);
        let text = TextEncoder::new(vocab, embed, txt_hidden, d_model, rng);
        let momentum_image = image.detached_copy();
        let momentum_text = text.detached_copy();
        Ok(EncoderPair {
            image,
            text,
            momentum_image,
            momentum_text,
            beta,
        })
    }

    /// `momentum <- beta * momentum + (1 - beta) * main`, elementwise
    /// over every parameter pair.
    pub fn momentum_update(&self) -> Result<()> {
        let mains: Vec<&Tensor> = self
            .image
            .params()
            .into_iter()
            .chain(self.text.params())
            .collect();
        let moms: Vec<&Tensor> = self
            .momentum_image
            .params()
            .into_iter()
            .chain(self.momentum_text.params())
            .collect();
        for (main, mom) in mains.iter().zip(&moms) {
            if main.shape() != mom.shape() {
                return Err(CoreError::ParameterMismatch {
                    detail: format!(
                        "momentum shape {:?} vs main {:?}",
                        mom.shape(),
                        main.shape()
                    ),
                });
            }
            let src = main.to_vec();
            let beta = self.beta;
            mom.update_values(|m| {
                for (m, s) in m.iter_mut().zip(&src) {
                    *m = beta * *m + (1.0 - beta) * s;
                }
            });
        }
        Ok(())
    }

    /// Gradient-tracked parameters of the main encoders only.
    pub fn parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (name, t) in ["w1", "b1", "w2", "b2"].iter().zip(self.image.params()) {
            out.push((format!("encoders.image.{name}"), t.clone()));
        }
        for (name, t) in ["table", "w1", "b1", "w2", "b2"]
            .iter()
            .zip(self.text.params())
        {
            out.push((format!("encoders.text.{name}"), t.clone()));
        }
        out
    }

    /// Momentum parameters, for checkpointing.
    pub fn momentum_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (name, t) in ["w1", "b1", "w2", "b2"]
            .iter()
            .zip(self.momentum_image.params())
        {
            out.push((format!("momentum.image.{name}"), t.clone()));
        }
        for (name, t) in ["table", "w1", "b1", "w2", "b2"]
            .iter()
            .zip(self.momentum_text.params())
        {
            out.push((format!("momentum.text.{name}"), t.clone()));
        }
        out
    }
}
