//! Incremental inference with a key/value cache, used for greedy decoding.

use super::TransformerModel;
use crate::error::{Error, Result};
use crate::grad::{gemm, Float, View, ViewMut};

/// Per-layer cached keys and values for the positions decoded so far.
struct KvCache<T> {
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    len: usize,
}

impl<T: Float> TransformerModel<T> {
    fn w(&self, name: &str) -> &[T] {
        self.param(name)
            .unwrap_or_else(|| panic!("parameter {name} missing"))
            .data()
    }

    /// `out = x · W + b` for a single row.
    fn affine(&self, x: &[T], w: &str, b: Option<&str>, out_dim: usize) -> Vec<T> {
        let mut out = match b {
            Some(b) => self.w(b).to_vec(),
            None => vec![T::zero(); out_dim],
        };
        let beta = if b.is_some() { T::one() } else { T::zero() };
        gemm(
            T::one(),
            View::dense(x, 1, x.len()),
            View::dense(self.w(w), x.len(), out_dim),
            beta,
            ViewMut::dense(&mut out, 1, out_dim),
        );
        out
    }

    fn layer_norm_row(&self, x: &[T], prefix: &str) -> Vec<T> {
        let d = x.len();
        let dn = T::from_usize(d).expect("usize fits");
        let eps = T::from_f64_lossy(self.config().eps_ln);
        let mean = x.iter().copied().sum::<T>() / dn;
        let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let rs = T::one() / (var + eps).sqrt();
        let g = self.w(&format!("{prefix}.gain"));
        let b = self.w(&format!("{prefix}.bias"));
        (0..d).map(|j| (x[j] - mean) * rs * g[j] + b[j]).collect()
    }

    /// Feeds one token at the next position and returns its logits.
    fn step(&self, cache: &mut KvCache<T>, token: usize) -> Vec<T> {
        let cfg = self.config();
        let (d, heads, hd) = (cfg.d_model, cfg.n_heads, cfg.head_dim());
        let pos = cache.len;
        let te = &self.w("token_embedding")[token * d..(token + 1) * d];
        let pe = &self.w("position_embedding")[pos * d..(pos + 1) * d];
        let mut x: Vec<T> = te.iter().zip(pe).map(|(&a, &b)| a + b).collect();
        let scale = T::one() / T::from_usize(hd).expect("usize fits").sqrt();
        for i in 0..cfg.n_layers {
            let name = |s: &str| format!("block.{i}.{s}");
            let h = self.layer_norm_row(&x, &name("ln1"));
            let qkv = self.affine(&h, &name("attn.w_qkv"), Some(&name("attn.b_qkv")), 3 * d);
            cache.keys[i].extend_from_slice(&qkv[d..2 * d]);
            cache.values[i].extend_from_slice(&qkv[2 * d..]);
            let n = pos + 1;
            let mut att = vec![T::zero(); d];
            let mut scores = vec![T::zero(); n];
            for hh in 0..heads {
                let q = &qkv[hh * hd..(hh + 1) * hd];
                for (s, score) in scores.iter_mut().enumerate() {
                    let k = &cache.keys[i][s * d + hh * hd..s * d + (hh + 1) * hd];
                    *score = q.iter().zip(k).map(|(&a, &b)| a * b).sum::<T>() * scale;
                }
                let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for sc in scores.iter_mut() {
                    *sc = (*sc - max).exp();
                    z += *sc;
                }
                for (s, &p) in scores.iter().enumerate() {
                    let v = &cache.values[i][s * d + hh * hd..s * d + (hh + 1) * hd];
                    for j in 0..hd {
                        att[hh * hd + j] += p / z * v[j];
                    }
                }
            }
            let o = self.affine(&att, &name("attn.w_out"), Some(&name("attn.b_out")), d);
            x.iter_mut().zip(&o).for_each(|(a, &b)| *a += b);
            let h = self.layer_norm_row(&x, &name("ln2"));
            let mut f = self.affine(&h, &name("mlp.w_fc"), Some(&name("mlp.b_fc")), 4 * d);
            for v in f.iter_mut() {
                *v = T::from_f64_lossy(crate::grad::gelu_scalar(v.to_f64_lossy()));
            }
            let f = self.affine(&f, &name("mlp.w_proj"), Some(&name("mlp.b_proj")), d);
            x.iter_mut().zip(&f).for_each(|(a, &b)| *a += b);
        }
        cache.len += 1;
        let x = self.layer_norm_row(&x, "final_ln");
        if cfg.tie_embeddings {
            let wte = self.w("token_embedding");
            (0..cfg.vocab_size)
                .map(|v| x.iter().zip(&wte[v * d..(v + 1) * d]).map(|(&a, &b)| a * b).sum())
                .collect()
        } else {
            self.affine(&x, "lm_head.w", None, cfg.vocab_size)
        }
    }

    /// Logits at every position of a single sequence, computed incrementally.
    pub fn incremental_logits(&self, tokens: &[usize]) -> Result<Vec<Vec<T>>> {
        self.check_tokens(tokens, 1, tokens.len())?;
        let mut cache = self.new_cache();
        Ok(tokens.iter().map(|&t| self.step(&mut cache, t)).collect())
    }

    fn new_cache(&self) -> KvCache<T> {
        let n = self.config().n_layers;
        KvCache {
            keys: vec![Vec::new(); n],
            values: vec![Vec::new(); n],
            len: 0,
        }
    }

    /// Greedy argmax decoding. Returns the prompt followed by up to `max_new`
    /// generated tokens; generation stops after emitting `eos`.
    pub fn greedy_generate(&self, prompt: &[usize], max_new: usize, eos: Option<usize>) -> Result<Vec<usize>> {
        if prompt.is_empty() {
            return Err(Error::Input("greedy_generate needs a non-empty prompt".into()));
        }
        let ctx = self.config().context_len;
        if prompt.len() + max_new > ctx {
            return Err(Error::Input(format!(
                "prompt of {} tokens plus {max_new} new tokens exceeds context length {ctx}",
                prompt.len()
            )));
        }
        self.check_tokens(prompt, 1, prompt.len())?;
        let mut out = prompt.to_vec();
        if max_new == 0 {
            return Ok(out);
        }
        let mut cache = self.new_cache();
        let mut logits = Vec::new();
        for &t in prompt {
            logits = self.step(&mut cache, t);
        }
        for i in 0..max_new {
            let next = argmax(&logits);
            out.push(next);
            if Some(next) == eos || i + 1 == max_new {
                break;
            }
            logits = self.step(&mut cache, next);
        }
        Ok(out)
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax<T: Float>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}
