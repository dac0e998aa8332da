use std::collections::{BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::grad::{Float, NodeId, Tape, Tensor};

/// Standard deviation of the Gaussian used for every weight matrix and embedding.
pub const INIT_STD: f32 = 0.02;

/// A GPT-style decoder: learned token and position embeddings, pre-norm
/// blocks of causal self-attention and a GELU MLP, a final layer norm and a
/// linear LM head.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerModel<T: Float = f32> {
    config: ModelConfig,
    params: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

/// Output of a recorded forward pass.
pub struct Forward {
    /// `[batch, seq, vocab]` logits.
    pub logits: NodeId,
    /// One leaf per parameter, in canonical order.
    pub params: Vec<NodeId>,
}

impl TransformerModel<f32> {
    /// Seeded initialization: N(0, 0.02) weights and embeddings, zero biases,
    /// unit layer-norm gains.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0f32, INIT_STD).expect("valid std");
        let params = config
            .parameter_layout()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data = if name.ends_with(".gain") {
                    vec![1.0; n]
                } else if is_bias(&name) {
                    vec![0.0; n]
                } else {
                    (0..n).map(|_| normal.sample(&mut rng)).collect()
                };
                let t = Tensor::new(shape, data).expect("layout shapes are consistent");
                (name, t)
            })
            .collect();
        Ok(Self::assemble(config, params))
    }
}

fn is_bias(name: &str) -> bool {
    name.ends_with(".bias") || name.rsplit('.').next().is_some_and(|s| s.starts_with("b_"))
}

impl<T: Float> TransformerModel<T> {
    fn assemble(config: ModelConfig, params: Vec<(String, Tensor<T>)>) -> Self {
        let index = params.iter().enumerate().map(|(i, (n, _))| (n.clone(), i)).collect();
        TransformerModel { config, params, index }
    }

    /// Builds a model from named tensors, checking names and shapes against the
    /// layout implied by `config`.
    pub fn from_parameters(config: ModelConfig, tensors: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let layout = config.parameter_layout();
        if layout.len() != tensors.len() {
            return Err(Error::Shape(format!(
                "config implies {} parameters, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), (got_name, t)) in layout.iter().zip(&tensors) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(Error::Shape(format!(
                    "expected {name} {shape:?}, found {got_name} {:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self::assemble(config, tensors))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    pub fn parameters(&self) -> &[(String, Tensor<T>)] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.params[i].1)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.params[i].1)
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Float>(&self) -> TransformerModel<U> {
        TransformerModel::assemble(
            self.config.clone(),
            self.params.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        )
    }

    /// SHA-256 over names, shapes and little-endian `f32` values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.params {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update((v.to_f64_lossy() as f32).to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub(crate) fn check_tokens(&self, ids: &[usize], batch: usize, seq: usize) -> Result<()> {
        if batch == 0 || seq == 0 || ids.len() != batch * seq {
            return Err(Error::Input(format!(
                "{} token ids do not form a {batch}x{seq} matrix",
                ids.len()
            )));
        }
        if seq > self.config.context_len {
            return Err(Error::Input(format!(
                "sequence length {seq} exceeds context length {}",
                self.config.context_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Input(format!(
                "token {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Records a forward pass of a row-major `batch × seq` token matrix.
    ///
    /// Parameters named in `trainable` become gradient-carrying leaves; `None`
    /// makes every parameter trainable. On an inference tape nothing is.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        ids: &[usize],
        batch: usize,
        seq: usize,
        trainable: Option<&BTreeSet<String>>,
    ) -> Result<Forward> {
        self.check_tokens(ids, batch, seq)?;
        let params: Vec<NodeId> = self
            .params
            .iter()
            .map(|(name, t)| tape.leaf_tensor(t, trainable.is_none_or(|s| s.contains(name))))
            .collect();
        let logits = self.forward_with(tape, &params, ids, batch, seq)?;
        Ok(Forward { logits, params })
    }

    /// Like [`forward`](Self::forward), but reads the weights from `params`,
    /// one node per parameter in canonical order, instead of from `self`.
    /// Returns the `[batch, seq, vocab]` logits.
    pub fn forward_with(
        &self,
        tape: &mut Tape<T>,
        params: &[NodeId],
        ids: &[usize],
        batch: usize,
        seq: usize,
    ) -> Result<NodeId> {
        self.check_tokens(ids, batch, seq)?;
        if params.len() != self.params.len() {
            return Err(Error::Input(format!(
                "expected {} parameter nodes, got {}",
                self.params.len(),
                params.len()
            )));
        }
        let p = |name: &str| params[self.index[name]];
        let cfg = &self.config;
        let eps = T::from_f64_lossy(cfg.eps_ln);

        let positions: Vec<usize> = (0..batch).flat_map(|_| 0..seq).collect();
        let tok = tape.embedding(p("token_embedding"), ids)?;
        let pos = tape.embedding(p("position_embedding"), &positions)?;
        let mut x = tape.add(tok, pos)?;
        for i in 0..cfg.n_layers {
            let b = |s: &str| p(&format!("block.{i}.{s}"));
            let h = tape.layer_norm(x, b("ln1.gain"), b("ln1.bias"), eps)?;
            let qkv = tape.matmul(h, b("attn.w_qkv"))?;
            let qkv = tape.add_row(qkv, b("attn.b_qkv"))?;
            let a = tape.causal_attention(qkv, batch, seq, cfg.n_heads)?;
            let o = tape.matmul(a, b("attn.w_out"))?;
            let o = tape.add_row(o, b("attn.b_out"))?;
            x = tape.add(x, o)?;
            let h = tape.layer_norm(x, b("ln2.gain"), b("ln2.bias"), eps)?;
            let f = tape.matmul(h, b("mlp.w_fc"))?;
            let f = tape.add_row(f, b("mlp.b_fc"))?;
            let f = tape.gelu(f)?;
            let f = tape.matmul(f, b("mlp.w_proj"))?;
            let f = tape.add_row(f, b("mlp.b_proj"))?;
            x = tape.add(x, f)?;
        }
        let x = tape.layer_norm(x, p("final_ln.gain"), p("final_ln.bias"), eps)?;
        let head = if cfg.tie_embeddings {
            tape.transpose(p("token_embedding"))?
        } else {
            p("lm_head.w")
        };
        let logits = tape.matmul(x, head)?;
        tape.reshape(logits, vec![batch, seq, cfg.vocab_size])
    }

    /// Logits without recording anything for differentiation.
    pub fn logits(&self, ids: &[usize], batch: usize, seq: usize) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let fwd = self.forward(&mut tape, ids, batch, seq, None)?;
        Tensor::new(tape.shape(fwd.logits).to_vec(), tape.value(fwd.logits).to_vec())
    }
}
