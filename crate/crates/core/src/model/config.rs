use serde::{Deserialize, Serialize};

use crate::data::VOCAB_SIZE;
use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub context_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    #[serde(default)]
    pub tie_embeddings: bool,
    #[serde(default = "default_eps")]
    pub eps_ln: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_eps() -> f64 {
    1e-5
}

impl ModelConfig {
    /// The deeper of the two toy models: 4 blocks, width 128.
    pub fn large() -> Self {
        ModelConfig {
            vocab_size: VOCAB_SIZE,
            context_len: 128,
            d_model: 128,
            n_heads: 4,
            n_layers: 4,
            tie_embeddings: false,
            eps_ln: 1e-5,
            seed: 0,
        }
    }

    /// The shallower toy model: 2 blocks, width 96.
    pub fn small() -> Self {
        ModelConfig {
            d_model: 96,
            n_layers: 2,
            ..Self::large()
        }
    }

    /// Tiny model used for finite-difference checks.
    pub fn gradcheck() -> Self {
        ModelConfig {
            vocab_size: VOCAB_SIZE,
            context_len: 8,
            d_model: 16,
            n_heads: 2,
            n_layers: 2,
            tie_embeddings: false,
            eps_ln: 1e-5,
            seed: 7,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.vocab_size == 0 || self.context_len == 0 || self.d_model == 0 || self.n_heads == 0 {
            return fail(format!("all sizes must be positive: {self:?}"));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_layers < 2 {
            return fail(format!("n_layers must be at least 2, got {}", self.n_layers));
        }
        if !(self.eps_ln > 0.0 && self.eps_ln.is_finite()) {
            return fail(format!("eps_ln must be a positive finite number, got {}", self.eps_ln));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Parameter names and shapes in canonical order.
    pub fn parameter_layout(&self) -> Vec<(String, Vec<usize>)> {
        let (v, c, d) = (self.vocab_size, self.context_len, self.d_model);
        let mut out = vec![
            ("token_embedding".to_string(), vec![v, d]),
            ("position_embedding".to_string(), vec![c, d]),
        ];
        for i in 0..self.n_layers {
            let p = |s: &str| format!("block.{i}.{s}");
            out.extend([
                (p("ln1.gain"), vec![d]),
                (p("ln1.bias"), vec![d]),
                (p("attn.w_qkv"), vec![d, 3 * d]),
                (p("attn.b_qkv"), vec![3 * d]),
                (p("attn.w_out"), vec![d, d]),
                (p("attn.b_out"), vec![d]),
                (p("ln2.gain"), vec![d]),
                (p("ln2.bias"), vec![d]),
                (p("mlp.w_fc"), vec![d, 4 * d]),
                (p("mlp.b_fc"), vec![4 * d]),
                (p("mlp.w_proj"), vec![4 * d, d]),
                (p("mlp.b_proj"), vec![d]),
            ]);
        }
        out.push(("final_ln.gain".to_string(), vec![d]));
        out.push(("final_ln.bias".to_string(), vec![d]));
        if !self.tie_embeddings {
            out.push(("lm_head.w".to_string(), vec![d, v]));
        }
        out
    }
}
