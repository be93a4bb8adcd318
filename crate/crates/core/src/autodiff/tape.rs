use std::collections::BTreeMap;
use std::fmt;

use super::kernels;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operator kinds, used for diagnostics and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    Matmul,
    Transpose,
    Reshape,
    Sum,
    Select,
    Concat,
    Conv2d,
    Relu,
    MaxPool2d,
    GlobalAvgPool,
    Dense,
    LayerNorm,
    Softmax,
    CrossEntropy,
}

impl OpKind {
    pub const ALL: [OpKind; 19] = [
        OpKind::Leaf,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::Matmul,
        OpKind::Transpose,
        OpKind::Reshape,
        OpKind::Sum,
        OpKind::Select,
        OpKind::Concat,
        OpKind::Conv2d,
        OpKind::Relu,
        OpKind::MaxPool2d,
        OpKind::GlobalAvgPool,
        OpKind::Dense,
        OpKind::LayerNorm,
        OpKind::Softmax,
        OpKind::CrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul_elementwise",
            OpKind::Scale => "scale",
            OpKind::Matmul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Reshape => "reshape",
            OpKind::Sum => "sum",
            OpKind::Select => "select",
            OpKind::Concat => "concat",
            OpKind::Conv2d => "conv2d",
            OpKind::Relu => "relu",
            OpKind::MaxPool2d => "max_pool2d",
            OpKind::GlobalAvgPool => "global_avg_pool",
            OpKind::Dense => "dense",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Softmax => "softmax",
            OpKind::CrossEntropy => "cross_entropy",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Recorded operation plus whatever the backward rule needs from the
/// forward pass.
#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    Sum(NodeId),
    Select(NodeId, usize),
    Concat(NodeId, NodeId),
    Conv2d {
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    },
    Relu(NodeId),
    MaxPool2d {
        input: NodeId,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(NodeId),
    Dense {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    LayerNorm {
        input: NodeId,
        inv_std: Vec<f64>,
    },
    Softmax(NodeId),
    CrossEntropy {
        logits: NodeId,
        label: usize,
        probs: Vec<f64>,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Matmul(..) => OpKind::Matmul,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Sum(_) => OpKind::Sum,
            Op::Select(..) => OpKind::Select,
            Op::Concat(..) => OpKind::Concat,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Relu(_) => OpKind::Relu,
            Op::MaxPool2d { .. } => OpKind::MaxPool2d,
            Op::GlobalAvgPool(_) => OpKind::GlobalAvgPool,
            Op::Dense { .. } => OpKind::Dense,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Softmax(_) => OpKind::Softmax,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }

    fn parents(&self) -> Vec<NodeId> {
        match *self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) | Op::Concat(a, b) => {
                vec![a, b]
            }
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Select(a, _)
            | Op::Relu(a)
            | Op::GlobalAvgPool(a)
            | Op::Softmax(a) => vec![a],
            Op::Conv2d {
                input, kernels, bias, ..
            } => vec![input, kernels, bias],
            Op::MaxPool2d { input, .. } | Op::LayerNorm { input, .. } => vec![input],
            Op::Dense { input, weight, bias } => vec![input, weight, bias],
            Op::CrossEntropy { logits, .. } => vec![logits],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a computation.
///
/// A tape is a single-threaded context; independent tapes may run on
/// separate threads.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<(OpKind, f64)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Test hook: scale every backward contribution emitted by `kind` by
    /// `factor`. Used to prove that gradient checks catch a broken rule.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: OpKind, factor: f64) {
        self.fault = Some((kind, factor));
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_raw(value, Op::Leaf, false)
    }

    /// Mark an existing node as a gradient target. Only operations recorded
    /// after this call will route gradients to it.
    pub fn watch(&mut self, id: NodeId) -> Result<()> {
        self.check(id)?;
        self.nodes[id.0].requires_grad = true;
        Ok(())
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn try_value(&self, id: NodeId) -> Result<&Tensor> {
        self.check(id)?;
        Ok(&self.nodes[id.0].value)
    }

    pub fn op_kind(&self, id: NodeId) -> OpKind {
        self.nodes[id.0].op.kind()
    }

    pub fn parents(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.parents()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub(crate) fn check(&self, id: NodeId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "node {} is not on this tape ({} nodes)",
                id.0,
                self.nodes.len()
            )))
        }
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        id
    }

    /// Records an operator node; it requires grad iff any parent does.
    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_raw(value, op, requires_grad)
    }

    /// Reverse-mode gradients of the scalar `output` with respect to `wrt`.
    ///
    /// Nodes in `wrt` that `output` does not depend on receive zeros.
    pub fn backward(&self, output: NodeId, wrt: &[NodeId]) -> Result<GradientSet> {
        self.check(output)?;
        for &w in wrt {
            self.check(w)?;
        }
        let seed_value = &self.nodes[output.0].value;
        if seed_value.len() != 1 {
            return Err(Error::contract(format!(
                "backward() needs a scalar seed, got shape {:?}",
                seed_value.shape()
            )));
        }

        let mut wanted = vec![false; self.nodes.len()];
        for &w in wrt {
            wanted[w.0] = true;
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);
        let mut result = BTreeMap::new();

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if wanted[i] {
                result.insert(NodeId(i), Tensor::new(node.value.shape(), g.clone())?);
            }
            if !node.requires_grad {
                continue;
            }
            let mut contributions = self.backward_rule(node, &g)?;
            if let Some((kind, factor)) = self.fault {
                if kind == node.op.kind() {
                    for (_, c) in &mut contributions {
                        c.iter_mut().for_each(|v| *v *= factor);
                    }
                }
            }
            for (parent, contribution) in contributions {
                match &mut grads[parent.0] {
                    Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }

        for &w in wrt {
            result
                .entry(w)
                .or_insert_with(|| Tensor::zeros(self.nodes[w.0].value.shape()));
        }
        Ok(GradientSet { grads: result })
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Gradient contributions to each parent that requires grad.
    fn backward_rule(&self, node: &Node, g: &[f64]) -> Result<Vec<(NodeId, Vec<f64>)>> {
        let mut out = Vec::with_capacity(3);
        let val = |id: NodeId| &self.nodes[id.0].value;
        match &node.op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                if self.needs(a) {
                    out.push((a, kernels::reduce_broadcast(g, val(a).len())));
                }
                if self.needs(b) {
                    out.push((b, kernels::reduce_broadcast(g, val(b).len())));
                }
            }
            &Op::Sub(a, b) => {
                if self.needs(a) {
                    out.push((a, kernels::reduce_broadcast(g, val(a).len())));
                }
                if self.needs(b) {
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    out.push((b, kernels::reduce_broadcast(&neg, val(b).len())));
                }
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (val(a).data(), val(b).data());
                if self.needs(a) {
                    let ga: Vec<f64> = g.iter().enumerate().map(|(i, gi)| gi * kernels::bcast(bv, i)).collect();
                    out.push((a, kernels::reduce_broadcast(&ga, av.len())));
                }
                if self.needs(b) {
                    let gb: Vec<f64> = g.iter().enumerate().map(|(i, gi)| gi * kernels::bcast(av, i)).collect();
                    out.push((b, kernels::reduce_broadcast(&gb, bv.len())));
                }
            }
            &Op::Scale(a, factor) => {
                out.push((a, g.iter().map(|v| v * factor).collect()));
            }
            &Op::Matmul(a, b) => {
                let (m, k) = (val(a).shape()[0], val(a).shape()[1]);
                let n = val(b).shape()[1];
                if self.needs(a) {
                    // dA = G · Bᵀ
                    let bt = kernels::transpose(val(b).data(), k, n);
                    out.push((a, kernels::matmul(g, &bt, m, n, k)));
                }
                if self.needs(b) {
                    // dB = Aᵀ · G
                    let at = kernels::transpose(val(a).data(), m, k);
                    out.push((b, kernels::matmul(&at, g, k, m, n)));
                }
            }
            &Op::Transpose(a) => {
                let s = node.value.shape();
                out.push((a, kernels::transpose(g, s[0], s[1])));
            }
            &Op::Reshape(a) => out.push((a, g.to_vec())),
            &Op::Sum(a) => out.push((a, vec![g[0]; val(a).len()])),
            &Op::Select(a, index) => {
                let mut ga = vec![0.0; val(a).len()];
                ga[index] = g[0];
                out.push((a, ga));
            }
            &Op::Concat(a, b) => {
                let split = val(a).len();
                if self.needs(a) {
                    out.push((a, g[..split].to_vec()));
                }
                if self.needs(b) {
                    out.push((b, g[split..].to_vec()));
                }
            }
            &Op::Conv2d {
                input,
                kernels: kernel_id,
                bias,
                stride,
                padding,
            } => {
                let geom = kernels::ConvGeometry::new(val(input).shape(), val(kernel_id).shape(), stride, padding)?;
                if self.needs(input) {
                    out.push((input, geom.grad_input(val(kernel_id).data(), g)));
                }
                if self.needs(kernel_id) {
                    out.push((kernel_id, geom.grad_kernels(val(input).data(), g)));
                }
                if self.needs(bias) {
                    out.push((bias, geom.grad_bias(g)));
                }
            }
            &Op::Relu(a) => {
                let ga = g
                    .iter()
                    .zip(val(a).data())
                    .map(|(gi, &x)| if x > 0.0 { *gi } else { 0.0 })
                    .collect();
                out.push((a, ga));
            }
            Op::MaxPool2d { input, argmax } => {
                let mut ga = vec![0.0; val(*input).len()];
                for (gi, &src) in g.iter().zip(argmax) {
                    ga[src] += gi;
                }
                out.push((*input, ga));
            }
            &Op::GlobalAvgPool(a) => {
                let shape = val(a).shape();
                let plane = shape[1] * shape[2];
                let inv = 1.0 / plane as f64;
                let mut ga = Vec::with_capacity(val(a).len());
                for gd in g {
                    ga.extend(std::iter::repeat_n(gd * inv, plane));
                }
                out.push((a, ga));
            }
            &Op::Dense { input, weight, bias } => {
                let (n_in, n_out) = (val(weight).shape()[0], val(weight).shape()[1]);
                let rows = val(input).len() / n_in;
                if self.needs(input) {
                    let wt = kernels::transpose(val(weight).data(), n_in, n_out);
                    out.push((input, kernels::matmul(g, &wt, rows, n_out, n_in)));
                }
                if self.needs(weight) {
                    let at = kernels::transpose(val(input).data(), rows, n_in);
                    out.push((weight, kernels::matmul(&at, g, n_in, rows, n_out)));
                }
                if self.needs(bias) {
                    let mut gb = vec![0.0; n_out];
                    for row in g.chunks(n_out) {
                        gb.iter_mut().zip(row).for_each(|(b, r)| *b += r);
                    }
                    out.push((bias, gb));
                }
            }
            Op::LayerNorm { input, inv_std } => {
                let y = node.value.data();
                let n = *node.value.shape().last().unwrap_or(&1);
                let mut ga = vec![0.0; y.len()];
                for (r, &s) in inv_std.iter().enumerate() {
                    let range = r * n..(r + 1) * n;
                    let (yr, gr) = (&y[range.clone()], &g[range.clone()]);
                    let mean_g = gr.iter().sum::<f64>() / n as f64;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for ((o, gi), yi) in ga[range].iter_mut().zip(gr).zip(yr) {
                        *o = s * (gi - mean_g - yi * mean_gy);
                    }
                }
                out.push((*input, ga));
            }
            &Op::Softmax(a) => {
                let y = node.value.data();
                let n = *node.value.shape().last().unwrap_or(&1);
                let mut ga = vec![0.0; y.len()];
                for ((orow, yrow), grow) in ga.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                    let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for ((o, yi), gi) in orow.iter_mut().zip(yrow).zip(grow) {
                        *o = yi * (gi - dot);
                    }
                }
                out.push((a, ga));
            }
            Op::CrossEntropy { logits, label, probs } => {
                let ga = probs
                    .iter()
                    .enumerate()
                    .map(|(k, p)| g[0] * (p - if k == *label { 1.0 } else { 0.0 }))
                    .collect();
                out.push((*logits, ga));
            }
        }
        Ok(out)
    }
}

/// Gradients keyed by node, each shaped like the node's forward value.
#[derive(Clone, Debug, Default)]
pub struct GradientSet {
    grads: BTreeMap<NodeId, Tensor>,
}

impl GradientSet {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.remove(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Tensor)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }
}
