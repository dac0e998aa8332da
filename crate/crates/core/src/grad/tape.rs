//! Wengert-list reverse-mode differentiation.
//!
//! Each primitive writes its output node and, when any input needs a
//! gradient, appends an [`Op`] carrying whatever the backward rule needs.
//! `backward` walks the op list once in reverse. Nodes are only ever appended,
//! so the op list is topologically ordered by construction.

use super::scalar::{gemm, View, ViewMut};
use super::tensor::{check_shape, Tensor};
use super::Float;
use crate::error::{Error, Result};

/// Label value that excludes a position from the loss.
pub const IGNORE_INDEX: i64 = -100;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// A value on the tape together with its gradient slot.
#[derive(Clone, Debug)]
pub struct TensorNode<T> {
    shape: Vec<usize>,
    values: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

impl<T: Float> TensorNode<T> {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn last_dim(&self) -> usize {
        *self.shape.last().expect("shapes are never empty")
    }
}

enum Op<T> {
    MatMul {
        a: NodeId,
        b: NodeId,
        out: NodeId,
    },
    Transpose {
        x: NodeId,
        out: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
        out: NodeId,
    },
    AddRow {
        x: NodeId,
        bias: NodeId,
        out: NodeId,
    },
    Scale {
        x: NodeId,
        factor: T,
        out: NodeId,
    },
    Sum {
        x: NodeId,
        out: NodeId,
    },
    Reshape {
        x: NodeId,
        out: NodeId,
    },
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        out: NodeId,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu {
        x: NodeId,
        out: NodeId,
    },
    Softmax {
        x: NodeId,
        out: NodeId,
    },
    CausalAttention {
        qkv: NodeId,
        out: NodeId,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: Vec<T>,
    },
    Embedding {
        table: NodeId,
        ids: Vec<usize>,
        out: NodeId,
    },
    CrossEntropy {
        logits: NodeId,
        out: NodeId,
        /// (row, label) for every unmasked position.
        rows: Vec<(usize, usize)>,
        /// softmax of each unmasked row, in `rows` order.
        probs: Vec<T>,
    },
}

impl<T> Op<T> {
    fn out(&self) -> NodeId {
        match self {
            Op::MatMul { out, .. }
            | Op::Transpose { out, .. }
            | Op::Add { out, .. }
            | Op::AddRow { out, .. }
            | Op::Scale { out, .. }
            | Op::Sum { out, .. }
            | Op::Reshape { out, .. }
            | Op::LayerNorm { out, .. }
            | Op::Gelu { out, .. }
            | Op::Softmax { out, .. }
            | Op::CausalAttention { out, .. }
            | Op::Embedding { out, .. }
            | Op::CrossEntropy { out, .. } => *out,
        }
    }
}

/// The computation tape: nodes plus the ordered record of primitives applied.
pub struct Tape<T: Float> {
    nodes: Vec<TensorNode<T>>,
    ops: Vec<Op<T>>,
    recording: bool,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_COEF: f64 = 0.044_715;

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + GELU_COEF * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let t = (c * (x + GELU_COEF * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * GELU_COEF * x * x)
}

impl<T: Float> Tape<T> {
    /// A tape that records operations for differentiation.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            ops: Vec::new(),
            recording: true,
        }
    }

    /// A tape for evaluation only: nothing requires a gradient and no
    /// backward state is cached.
    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            ops: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn node(&self, id: NodeId) -> &TensorNode<T> {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.nodes[id.0].values
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, id: NodeId) -> T {
        self.nodes[id.0].values[0]
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_ops(&self) -> usize {
        self.ops.len()
    }

    /// Clears every gradient slot.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Adds a leaf node.
    pub fn leaf(&mut self, shape: Vec<usize>, values: Vec<T>, requires_grad: bool) -> Result<NodeId> {
        check_shape(&shape, values.len())?;
        Ok(self.push(shape, values, requires_grad && self.recording))
    }

    pub fn leaf_tensor(&mut self, tensor: &Tensor<T>, requires_grad: bool) -> NodeId {
        self.push(
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            requires_grad && self.recording,
        )
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<T>, requires_grad: bool) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.nodes.push(TensorNode {
            shape,
            values,
            grad: None,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs_grad(&self, inputs: &[NodeId]) -> bool {
        self.recording && inputs.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn record(&mut self, op: Op<T>) {
        if self.nodes[op.out().0].requires_grad {
            self.ops.push(op);
        }
    }

    fn dims2(&self, id: NodeId, what: &str) -> Result<(usize, usize)> {
        match self.nodes[id.0].shape[..] {
            [r, c] => Ok((r, c)),
            ref s => Err(Error::Dimension(format!("{what} must be 2-D, got shape {s:?}"))),
        }
    }

    /// `a [m×k] · b [k×n] -> [m×n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2(a, "matmul lhs")?;
        let (k2, n) = self.dims2(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul shapes {:?} and {:?} do not align",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            T::one(),
            View::dense(self.value(a), m, k),
            View::dense(self.value(b), k, n),
            T::zero(),
            ViewMut::dense(&mut out, m, n),
        );
        let rg = self.needs_grad(&[a, b]);
        let out = self.push(vec![m, n], out, rg);
        self.record(Op::MatMul { a, b, out });
        Ok(out)
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims2(x, "transpose input")?;
        let src = self.value(x);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.needs_grad(&[x]);
        let out = self.push(vec![c, r], out, rg);
        self.record(Op::Transpose { x, out });
        Ok(out)
    }

    /// Elementwise sum of two same-shaped nodes.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "add shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out: Vec<T> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs_grad(&[a, b]);
        let out = self.push(shape, out, rg);
        self.record(Op::Add { a, b, out });
        Ok(out)
    }

    /// Adds a length-`d` vector to every row of `x [...×d]`.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let d = self.nodes[x.0].last_dim();
        if self.shape(bias) != [d] {
            return Err(Error::Dimension(format!(
                "row bias {:?} does not match input {:?}",
                self.shape(bias),
                self.shape(x)
            )));
        }
        let b = self.value(bias);
        let out: Vec<T> = self
            .value(x)
            .chunks_exact(d)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &bv)| v + bv))
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs_grad(&[x, bias]);
        let out = self.push(shape, out, rg);
        self.record(Op::AddRow { x, bias, out });
        Ok(out)
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> Result<NodeId> {
        let out: Vec<T> = self.value(x).iter().map(|&v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs_grad(&[x]);
        let out = self.push(shape, out, rg);
        self.record(Op::Scale { x, factor, out });
        Ok(out)
    }

    /// Sum of every element, as a one-element node.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let total: T = self.value(x).iter().copied().sum();
        let rg = self.needs_grad(&[x]);
        let out = self.push(vec![1], vec![total], rg);
        self.record(Op::Sum { x, out });
        Ok(out)
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        check_shape(&shape, self.nodes[x.0].len())?;
        let values = self.value(x).to_vec();
        let rg = self.needs_grad(&[x]);
        let out = self.push(shape, values, rg);
        self.record(Op::Reshape { x, out });
        Ok(out)
    }

    /// Normalizes each row of `x [...×d]` to zero mean and unit variance, then
    /// applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: T) -> Result<NodeId> {
        let d = self.nodes[x.0].last_dim();
        if d == 0 {
            return Err(Error::Dimension("layer_norm over an empty last dimension".into()));
        }
        if eps.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::Dimension(format!("layer_norm eps must be positive, got {eps:?}")));
        }
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::Dimension(format!(
                "layer_norm gain {:?} / bias {:?} must both be [{d}] for input {:?}",
                self.shape(gain),
                self.shape(bias),
                self.shape(x)
            )));
        }
        let xs = self.value(x);
        let g = self.value(gain);
        let b = self.value(bias);
        let rows = xs.len() / d;
        let dn = T::from_usize(d).expect("usize fits");
        let mut out = vec![T::zero(); xs.len()];
        let mut xhat = vec![T::zero(); xs.len()];
        let mut rstd = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.needs_grad(&[x, gain, bias]);
        let out = self.push(shape, out, rg);
        self.record(Op::LayerNorm {
            x,
            gain,
            bias,
            out,
            xhat,
            rstd,
        });
        Ok(out)
    }

    /// Tanh-approximation GELU.
    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId> {
        let out: Vec<T> = self
            .value(x)
            .iter()
            .map(|&v| T::from_f64_lossy(gelu_scalar(v.to_f64_lossy())))
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs_grad(&[x]);
        let out = self.push(shape, out, rg);
        self.record(Op::Gelu { x, out });
        Ok(out)
    }

    /// Softmax over the last dimension with max subtraction.
    pub fn softmax_lastdim(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.nodes[x.0].last_dim();
        let mut out = self.value(x).to_vec();
        for row in out.chunks_exact_mut(n) {
            softmax_in_place(row);
        }
        let shape = self.shape(x).to_vec();
        let rg = self.needs_grad(&[x]);
        let out = self.push(shape, out, rg);
        self.record(Op::Softmax { x, out });
        Ok(out)
    }

    /// Multi-head causal self-attention over a packed projection.
    ///
    /// `qkv` is `[batch*seq, 3*d]` with queries, keys and values side by side;
    /// head `h` owns columns `h*d/heads..(h+1)*d/heads` of each third. The result
    /// is `[batch*seq, d]`. Position `t` attends to positions `0..=t` of its own row.
    pub fn causal_attention(&mut self, qkv: NodeId, batch: usize, seq: usize, heads: usize) -> Result<NodeId> {
        let (rows, width) = self.dims2(qkv, "attention input")?;
        if rows != batch * seq || width % 3 != 0 || heads == 0 || (width / 3) % heads != 0 {
            return Err(Error::Dimension(format!(
                "attention input {:?} incompatible with batch {batch}, seq {seq}, heads {heads}",
                self.shape(qkv)
            )));
        }
        let d = width / 3;
        let hd = d / heads;
        let scale = T::one() / T::from_usize(hd).expect("usize fits").sqrt();
        let src = self.value(qkv);
        let mut out = vec![T::zero(); batch * seq * d];
        let mut probs = vec![T::zero(); batch * heads * seq * seq];
        for b in 0..batch {
            for h in 0..heads {
                let base = b * seq * width + h * hd;
                let q = View {
                    data: src,
                    offset: base,
                    rows: seq,
                    cols: hd,
                    rs: width,
                    cs: 1,
                };
                let k = View { offset: base + d, ..q };
                let v = View { offset: base + 2 * d, ..q };
                let p = &mut probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
                gemm(scale, q, k.t(), T::zero(), ViewMut::dense(p, seq, seq));
                for t in 0..seq {
                    let row = &mut p[t * seq..(t + 1) * seq];
                    softmax_in_place(&mut row[..=t]);
                    row[t + 1..].iter_mut().for_each(|x| *x = T::zero());
                }
                gemm(
                    T::one(),
                    View::dense(p, seq, seq),
                    v,
                    T::zero(),
                    ViewMut {
                        data: &mut out,
                        offset: b * seq * d + h * hd,
                        rows: seq,
                        cols: hd,
                        rs: d,
                        cs: 1,
                    },
                );
            }
        }
        let rg = self.needs_grad(&[qkv]);
        let out = self.push(vec![batch * seq, d], out, rg);
        if !rg {
            probs = Vec::new();
        }
        self.record(Op::CausalAttention {
            qkv,
            out,
            batch,
            seq,
            heads,
            probs,
        });
        Ok(out)
    }

    /// Gathers rows of `table [n×d]`.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (n, d) = self.dims2(table, "embedding table")?;
        if ids.is_empty() {
            return Err(Error::Dimension("embedding lookup with no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(Error::Index(format!("embedding id {bad} out of range for table of {n} rows")));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&t[i * d..(i + 1) * d]);
        }
        let rg = self.needs_grad(&[table]);
        let out = self.push(vec![ids.len(), d], out, rg);
        self.record(Op::Embedding {
            table,
            ids: ids.to_vec(),
            out,
        });
        Ok(out)
    }

    /// Mean next-token cross-entropy over positions whose label is not
    /// [`IGNORE_INDEX`]. `logits` is `[...×V]` with one label per row.
    pub fn cross_entropy_masked(&mut self, logits: NodeId, labels: &[i64]) -> Result<NodeId> {
        let v = self.nodes[logits.0].last_dim();
        let n_rows = self.nodes[logits.0].len() / v;
        if labels.len() != n_rows {
            return Err(Error::Dimension(format!(
                "{} labels for logits {:?} ({n_rows} rows)",
                labels.len(),
                self.shape(logits)
            )));
        }
        let rg = self.needs_grad(&[logits]);
        let xs = self.value(logits);
        let mut rows = Vec::new();
        let mut probs = Vec::new();
        let mut total = 0.0f64;
        let mut buf = vec![0.0f64; v];
        for (r, &label) in labels.iter().enumerate() {
            if label == IGNORE_INDEX {
                continue;
            }
            if label < 0 || label as usize >= v {
                return Err(Error::Index(format!("label {label} at row {r} outside [0, {v})")));
            }
            let label = label as usize;
            let row = &xs[r * v..(r + 1) * v];
            buf.iter_mut().zip(row).for_each(|(b, x)| *b = x.to_f64_lossy());
            let lse = log_sum_exp(&buf);
            total += lse - buf[label];
            rows.push((r, label));
            if rg {
                probs.extend(buf.iter().map(|&x| T::from_f64_lossy((x - lse).exp())));
            }
        }
        if rows.is_empty() {
            return Err(Error::EmptyLoss);
        }
        let loss = T::from_f64_lossy(total / rows.len() as f64);
        let out = self.push(vec![1], vec![loss], rg);
        self.record(Op::CrossEntropy {
            logits,
            out,
            rows,
            probs,
        });
        Ok(out)
    }

    /// Propagates gradients from a one-element `loss` back to every node that
    /// requires one. Gradients add onto whatever the slots already hold, so two
    /// calls without [`Tape::zero_grad`] in between double them.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let node = &self.nodes[loss.0];
        if node.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.shape
            )));
        }
        if !node.requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for op in self.ops.iter().rev() {
            let out = op.out();
            if out.0 > loss.0 {
                continue;
            }
            let Some(g) = grads[out.0].take() else { continue };
            backprop_op(op, &g, &self.nodes, &mut grads);
            grads[out.0] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if !node.requires_grad {
                continue;
            }
            let g = g.unwrap_or_else(|| vec![T::zero(); node.values.len()]);
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, v)| *a += v),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }
}

fn softmax_in_place<T: Float>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x = *x / sum;
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

fn slot<'a, T: Float>(grads: &'a mut [Option<Vec<T>>], nodes: &[TensorNode<T>], id: NodeId) -> Option<&'a mut Vec<T>> {
    if !nodes[id.0].requires_grad {
        return None;
    }
    Some(grads[id.0].get_or_insert_with(|| vec![T::zero(); nodes[id.0].values.len()]))
}

fn backprop_op<T: Float>(op: &Op<T>, g: &[T], nodes: &[TensorNode<T>], grads: &mut [Option<Vec<T>>]) {
    match op {
        Op::MatMul { a, b, .. } => {
            let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
            let n = nodes[b.0].shape[1];
            let dc = View::dense(g, m, n);
            if let Some(da) = slot(grads, nodes, *a) {
                let bv = View::dense(&nodes[b.0].values, k, n);
                gemm(T::one(), dc, bv.t(), T::one(), ViewMut::dense(da, m, k));
            }
            if let Some(db) = slot(grads, nodes, *b) {
                let av = View::dense(&nodes[a.0].values, m, k);
                gemm(T::one(), av.t(), dc, T::one(), ViewMut::dense(db, k, n));
            }
        }
        Op::Transpose { x, .. } => {
            let (r, c) = (nodes[x.0].shape[0], nodes[x.0].shape[1]);
            if let Some(dx) = slot(grads, nodes, *x) {
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] += g[j * r + i];
                    }
                }
            }
        }
        Op::Add { a, b, .. } => {
            for id in [a, b] {
                if let Some(d) = slot(grads, nodes, *id) {
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
                }
            }
        }
        Op::AddRow { x, bias, .. } => {
            if let Some(dx) = slot(grads, nodes, *x) {
                dx.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
            }
            if let Some(db) = slot(grads, nodes, *bias) {
                let d = db.len();
                for row in g.chunks_exact(d) {
                    db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                }
            }
        }
        Op::Scale { x, factor, .. } => {
            if let Some(dx) = slot(grads, nodes, *x) {
                dx.iter_mut().zip(g).for_each(|(d, &g)| *d += g * *factor);
            }
        }
        Op::Sum { x, .. } => {
            if let Some(dx) = slot(grads, nodes, *x) {
                dx.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Reshape { x, .. } => {
            if let Some(dx) = slot(grads, nodes, *x) {
                dx.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
            ..
        } => {
            let d = nodes[gain.0].values.len();
            let gv = &nodes[gain.0].values;
            if let Some(dg) = slot(grads, nodes, *gain) {
                for (gr, hr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                    for j in 0..d {
                        dg[j] += gr[j] * hr[j];
                    }
                }
            }
            if let Some(db) = slot(grads, nodes, *bias) {
                for gr in g.chunks_exact(d) {
                    db.iter_mut().zip(gr).for_each(|(d, &g)| *d += g);
                }
            }
            if let Some(dx) = slot(grads, nodes, *x) {
                let dn = T::from_usize(d).expect("usize fits");
                let mut dxhat = vec![T::zero(); d];
                for (r, (gr, hr)) in g.chunks_exact(d).zip(xhat.chunks_exact(d)).enumerate() {
                    let mut mean_dh = T::zero();
                    let mut mean_dh_h = T::zero();
                    for j in 0..d {
                        dxhat[j] = gr[j] * gv[j];
                        mean_dh += dxhat[j];
                        mean_dh_h += dxhat[j] * hr[j];
                    }
                    mean_dh = mean_dh / dn;
                    mean_dh_h = mean_dh_h / dn;
                    let out = &mut dx[r * d..(r + 1) * d];
                    for j in 0..d {
                        out[j] += rstd[r] * (dxhat[j] - mean_dh - hr[j] * mean_dh_h);
                    }
                }
            }
        }
        Op::Gelu { x, .. } => {
            let xs = &nodes[x.0].values;
            if let Some(dx) = slot(grads, nodes, *x) {
                for ((d, &g), &xv) in dx.iter_mut().zip(g).zip(xs) {
                    *d += g * T::from_f64_lossy(gelu_derivative(xv.to_f64_lossy()));
                }
            }
        }
        Op::Softmax { x, out } => {
            let y = &nodes[out.0].values;
            let n = *nodes[x.0].shape.last().expect("non-empty shape");
            if let Some(dx) = slot(grads, nodes, *x) {
                for ((dr, gr), yr) in dx.chunks_exact_mut(n).zip(g.chunks_exact(n)).zip(y.chunks_exact(n)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        dr[j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
        }
        Op::CausalAttention {
            qkv,
            batch,
            seq,
            heads,
            probs,
            ..
        } => {
            let (batch, seq, heads) = (*batch, *seq, *heads);
            let width = nodes[qkv.0].shape[1];
            let d = width / 3;
            let hd = d / heads;
            let scale = T::one() / T::from_usize(hd).expect("usize fits").sqrt();
            let src = &nodes[qkv.0].values;
            let Some(dqkv) = slot(grads, nodes, *qkv) else { return };
            let mut dp = vec![T::zero(); seq * seq];
            for b in 0..batch {
                for h in 0..heads {
                    let base = b * seq * width + h * hd;
                    let q = View {
                        data: src.as_slice(),
                        offset: base,
                        rows: seq,
                        cols: hd,
                        rs: width,
                        cs: 1,
                    };
                    let k = View { offset: base + d, ..q };
                    let v = View { offset: base + 2 * d, ..q };
                    let dout = View {
                        data: g,
                        offset: b * seq * d + h * hd,
                        rows: seq,
                        cols: hd,
                        rs: d,
                        cs: 1,
                    };
                    let p = &probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
                    let pv = View::dense(p, seq, seq);
                    // dV += Pᵀ dO
                    gemm(
                        T::one(),
                        pv.t(),
                        dout,
                        T::one(),
                        ViewMut {
                            data: dqkv,
                            offset: base + 2 * d,
                            rows: seq,
                            cols: hd,
                            rs: width,
                            cs: 1,
                        },
                    );
                    // dP = dO Vᵀ, then through the row softmax and the score scale.
                    gemm(T::one(), dout, v.t(), T::zero(), ViewMut::dense(&mut dp, seq, seq));
                    for t in 0..seq {
                        let pr = &p[t * seq..(t + 1) * seq];
                        let dr = &mut dp[t * seq..(t + 1) * seq];
                        let dot: T = (0..=t).map(|s| pr[s] * dr[s]).sum();
                        for s in 0..=t {
                            dr[s] = pr[s] * (dr[s] - dot) * scale;
                        }
                        dr[t + 1..].iter_mut().for_each(|x| *x = T::zero());
                    }
                    let ds = View::dense(dp.as_slice(), seq, seq);
                    // dQ += dS K
                    gemm(
                        T::one(),
                        ds,
                        k,
                        T::one(),
                        ViewMut {
                            data: dqkv,
                            offset: base,
                            rows: seq,
                            cols: hd,
                            rs: width,
                            cs: 1,
                        },
                    );
                    // dK += dSᵀ Q
                    gemm(
                        T::one(),
                        ds.t(),
                        q,
                        T::one(),
                        ViewMut {
                            data: dqkv,
                            offset: base + d,
                            rows: seq,
                            cols: hd,
                            rs: width,
                            cs: 1,
                        },
                    );
                }
            }
        }
        Op::Embedding { table, ids, .. } => {
            let d = nodes[table.0].shape[1];
            if let Some(dt) = slot(grads, nodes, *table) {
                for (r, &i) in ids.iter().enumerate() {
                    let dst = &mut dt[i * d..(i + 1) * d];
                    dst.iter_mut().zip(&g[r * d..(r + 1) * d]).for_each(|(d, &g)| *d += g);
                }
            }
        }
        Op::CrossEntropy { logits, rows, probs, .. } => {
            let v = *nodes[logits.0].shape.last().expect("non-empty shape");
            let scale = g[0] / T::from_usize(rows.len()).expect("usize fits");
            if let Some(dl) = slot(grads, nodes, *logits) {
                for (i, &(r, label)) in rows.iter().enumerate() {
                    let pr = &probs[i * v..(i + 1) * v];
                    let dr = &mut dl[r * v..(r + 1) * v];
                    for j in 0..v {
                        dr[j] += scale * pr[j];
                    }
                    dr[label] -= scale;
                }
            }
        }
    }
}
