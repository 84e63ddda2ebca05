use rand::Rng;

use super::{check_finite, Tensor};
use crate::kernels::{gemm, Gemm};
use crate::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    MatMul { a: Var, b: Var, trans_b: bool },
    Embedding { table: Var, ids: Vec<usize> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f32>, rstd: Vec<f32> },
    Dropout { x: Var, mask: Vec<f32> },
    Reshape(Var),
    Permute { x: Var, src_index: Vec<usize> },
    MaskedFill { x: Var, mask: Vec<bool> },
    Softmax(Var),
    LogSoftmax { x: Var, axis: usize },
    Relu(Var),
    Sum(Var),
    WeightedNll { logp: Var, weights: Vec<f32>, scale: f64 },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f32>,
    requires_grad: bool,
    op: Op,
    grad: Option<Vec<f32>>,
    /// Reductions keep their f64 accumulator so callers can read the loss
    /// without f32 rounding.
    scalar: Option<f64>,
}

/// Append-only computation tape. Nodes are created in topological order, so
/// backward is a single reverse sweep.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    grad_enabled: bool,
    train: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// Gradient-tracking graph in evaluation mode (dropout off).
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grad_enabled: true, train: false }
    }

    /// Graph that records values only; nothing on it requires a gradient.
    pub fn no_grad() -> Self {
        Graph { nodes: Vec::new(), grad_enabled: false, train: false }
    }

    pub fn set_train(&mut self, train: bool) {
        self.train = train;
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Places a tensor on the tape. It participates in backward when the
    /// tensor has `requires_grad` set and this graph tracks gradients.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            requires_grad: self.grad_enabled && t.requires_grad,
            op: Op::Leaf,
            grad: None,
            scalar: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f32>) -> Var {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "constant shape");
        self.nodes.push(Node {
            shape: shape.to_vec(),
            value: data,
            requires_grad: false,
            op: Op::Leaf,
            grad: None,
            scalar: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Value of a single-element node, at f64 precision for reductions.
    pub fn scalar(&self, v: Var) -> f64 {
        let node = &self.nodes[v.0];
        assert_eq!(node.value.len(), 1, "scalar() on shape {:?}", node.shape);
        node.scalar.unwrap_or(node.value[0] as f64)
    }

    /// Accumulated gradient of a leaf, populated by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        Tensor::new(node.shape.clone(), node.value.clone()).expect("node shape is consistent")
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f32>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { shape, value, requires_grad, op, grad: None, scalar: None });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shapes differ");
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push(self.shape(a).to_vec(), value, Op::Add(a, b), &[a, b])
    }

    /// Adds a vector along the last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let d = *self.shape(x).last().expect("add_bias on scalar");
        assert_eq!(self.value(bias).len(), d, "add_bias: bias length");
        let b = self.value(bias);
        let value = self.value(x).chunks(d).flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y)).collect();
        self.push(self.shape(x).to_vec(), value, Op::AddBias(x, bias), &[x, bias])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shapes differ");
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        self.push(self.shape(a).to_vec(), value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Var {
        let value = self.value(x).iter().map(|v| v * c).collect();
        self.push(self.shape(x).to_vec(), value, Op::Scale(x, c), &[x])
    }

    /// Batched product over the last two axes. `b` is either a matrix shared
    /// by every batch entry or carries the same leading axes as `a`. With
    /// `trans_b`, `b` is stored as `[.., n, k]`.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let ashape = self.shape(a).to_vec();
        let bshape = self.shape(b).to_vec();
        let plan = MatMulPlan::new(&ashape, &bshape, trans_b);
        let mut out = vec![0.0; plan.batch * plan.m * plan.n];
        plan.forward(self.value(a), self.value(b), &mut out);
        let mut shape = ashape[..ashape.len() - 1].to_vec();
        shape.push(plan.n);
        self.push(shape, out, Op::MatMul { a, b, trans_b }, &[a, b])
    }

    /// Gathers rows of a `[vocab, d]` table; the result has shape `[ids.len(), d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let tshape = self.shape(table);
        assert_eq!(tshape.len(), 2, "embedding table must be 2-d");
        let (vocab, d) = (tshape[0], tshape[1]);
        let tv = self.value(table);
        let mut value = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < vocab, "embedding id {id} out of range {vocab}");
            value.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        self.push(vec![ids.len(), d], value, Op::Embedding { table, ids: ids.to_vec() }, &[table])
    }

    /// Normalizes over the last axis, then applies `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Var {
        let d = *self.shape(x).last().expect("layer_norm on scalar");
        let (g, b) = (self.value(gamma), self.value(beta));
        assert_eq!(g.len(), d);
        assert_eq!(b.len(), d);
        let xv = self.value(x);
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut value = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps as f64).sqrt();
            rstd[r] = rs as f32;
            for j in 0..d {
                let h = ((row[j] as f64 - mean) * rs) as f32;
                xhat[r * d + j] = h;
                value[r * d + j] = g[j] * h + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(shape, value, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta])
    }

    /// Inverted dropout. Identity outside training mode or when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f32, rng: &mut R) -> Var {
        if !self.train || p <= 0.0 {
            return x;
        }
        assert!(p < 1.0, "dropout probability must be < 1");
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f32> = (0..self.value(x).len()).map(|_| if rng.gen::<f32>() < p { 0.0 } else { keep }).collect();
        let value = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, value, Op::Dropout { x, mask }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        assert_eq!(shape.iter().product::<usize>(), self.value(x).len(), "reshape {:?} -> {shape:?}", self.shape(x));
        let value = self.value(x).to_vec();
        self.push(shape.to_vec(), value, Op::Reshape(x), &[x])
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Var {
        let in_shape = self.shape(x).to_vec();
        let src_index = permute_index(&in_shape, perm);
        let xv = self.value(x);
        let value = src_index.iter().map(|&i| xv[i]).collect();
        let shape = perm.iter().map(|&p| in_shape[p]).collect();
        self.push(shape, value, Op::Permute { x, src_index }, &[x])
    }

    /// Replaces entries where `mask` is true with `fill`.
    pub fn masked_fill(&mut self, x: Var, mask: &[bool], fill: f32) -> Var {
        assert_eq!(mask.len(), self.value(x).len(), "masked_fill: mask length");
        let value = self.value(x).iter().zip(mask).map(|(&v, &m)| if m { fill } else { v }).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, value, Op::MaskedFill { x, mask: mask.to_vec() }, &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let d = *self.shape(x).last().expect("softmax on scalar");
        let mut value = self.value(x).to_vec();
        for row in value.chunks_mut(d) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f64;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v as f64;
            }
            let inv = (1.0 / sum) as f32;
            row.iter_mut().for_each(|v| *v *= inv);
        }
        let shape = self.shape(x).to_vec();
        self.push(shape, value, Op::Softmax(x), &[x])
    }

    /// Numerically stable log-softmax along `axis`. Rejects non-finite input.
    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!("axis {axis} out of range for {shape:?}")));
        }
        check_finite(self.value(x))?;
        let (outer, len, inner) = axis_split(&shape, axis);
        let xv = self.value(x);
        let mut value = vec![0.0; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| o * len * inner + a * inner + i;
                let max = (0..len).map(|a| xv[at(a)]).fold(f32::NEG_INFINITY, f32::max);
                let sum: f64 = (0..len).map(|a| ((xv[at(a)] - max) as f64).exp()).sum();
                let lse = max as f64 + sum.ln();
                for a in 0..len {
                    value[at(a)] = (xv[at(a)] as f64 - lse) as f32;
                }
            }
        }
        Ok(self.push(shape, value, Op::LogSoftmax { x, axis }, &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, value, Op::Relu(x), &[x])
    }

    /// Sum of all entries, accumulated in f64.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).iter().map(|&v| v as f64).sum();
        let v = self.push(vec![1], vec![s as f32], Op::Sum(x), &[x]);
        self.nodes[v.0].scalar = Some(s);
        v
    }

    /// `-scale * Σ weights ⊙ logp`, the shared kernel of every
    /// cross-entropy variant. `weights` are constants.
    pub fn weighted_nll(&mut self, logp: Var, weights: Vec<f32>, scale: f64) -> Var {
        assert_eq!(weights.len(), self.value(logp).len(), "weighted_nll: weight length");
        let s: f64 = self.value(logp).iter().zip(&weights).filter(|(_, &w)| w != 0.0).map(|(&l, &w)| l as f64 * w as f64).sum();
        let total = -scale * s;
        let v = self.push(vec![1], vec![total as f32], Op::WeightedNll { logp, weights, scale }, &[logp]);
        self.nodes[v.0].scalar = Some(total);
        v
    }

    /// Reverse sweep from a scalar `loss`. Leaf gradients are added to
    /// whatever earlier calls left there, so repeated calls accumulate until
    /// [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::NonScalarLoss(self.nodes[loss.0].shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let nodes = &self.nodes;
            match &node.op {
                Op::Leaf => leaf_grads.push((idx, g)),
                Op::Add(a, b) => {
                    add_into(slot(&mut grads, nodes, *a), &g);
                    add_into(slot(&mut grads, nodes, *b), &g);
                }
                Op::AddBias(x, bias) => {
                    add_into(slot(&mut grads, nodes, *x), &g);
                    if let Some(gb) = slot(&mut grads, nodes, *bias) {
                        let d = gb.len();
                        for row in g.chunks(d) {
                            gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        for i in 0..g.len() {
                            ga[i] += g[i] * bv[i];
                        }
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *b) {
                        for i in 0..g.len() {
                            gb[i] += g[i] * av[i];
                        }
                    }
                }
                Op::Scale(x, c) => {
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        gx.iter_mut().zip(&g).for_each(|(a, b)| *a += c * b);
                    }
                }
                Op::MatMul { a, b, trans_b } => {
                    let plan = MatMulPlan::new(&nodes[a.0].shape, &nodes[b.0].shape, *trans_b);
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        plan.grad_a(&g, &nodes[b.0].value, ga);
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *b) {
                        plan.grad_b(&g, &nodes[a.0].value, gb);
                    }
                }
                Op::Embedding { table, ids } => {
                    if let Some(gt) = slot(&mut grads, nodes, *table) {
                        let d = nodes[table.0].shape[1];
                        for (r, &id) in ids.iter().enumerate() {
                            let src = &g[r * d..(r + 1) * d];
                            gt[id * d..(id + 1) * d].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                        }
                    }
                }
                Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                    let d = nodes[gamma.0].value.len();
                    let gv = &nodes[gamma.0].value;
                    if let Some(gg) = slot(&mut grads, nodes, *gamma) {
                        for (row_g, row_h) in g.chunks(d).zip(xhat.chunks(d)) {
                            for j in 0..d {
                                gg[j] += row_g[j] * row_h[j];
                            }
                        }
                    }
                    if let Some(gbeta) = slot(&mut grads, nodes, *beta) {
                        for row_g in g.chunks(d) {
                            gbeta.iter_mut().zip(row_g).for_each(|(a, b)| *a += b);
                        }
                    }
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for (r, (row_g, row_h)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                            let mut mean_dh = 0.0f64;
                            let mut mean_dh_h = 0.0f64;
                            for j in 0..d {
                                let dh = (row_g[j] * gv[j]) as f64;
                                mean_dh += dh;
                                mean_dh_h += dh * row_h[j] as f64;
                            }
                            mean_dh /= d as f64;
                            mean_dh_h /= d as f64;
                            let rs = rstd[r] as f64;
                            for j in 0..d {
                                let dh = (row_g[j] * gv[j]) as f64;
                                gx[r * d + j] += (rs * (dh - mean_dh - row_h[j] as f64 * mean_dh_h)) as f32;
                            }
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for i in 0..g.len() {
                            gx[i] += g[i] * mask[i];
                        }
                    }
                }
                Op::Reshape(x) => add_into(slot(&mut grads, nodes, *x), &g),
                Op::Permute { x, src_index } => {
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for (o, &i) in src_index.iter().enumerate() {
                            gx[i] += g[o];
                        }
                    }
                }
                Op::MaskedFill { x, mask } => {
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for i in 0..g.len() {
                            if !mask[i] {
                                gx[i] += g[i];
                            }
                        }
                    }
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let d = *node.shape.last().unwrap();
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for r in 0..y.len() / d {
                            let (yr, gr) = (&y[r * d..(r + 1) * d], &g[r * d..(r + 1) * d]);
                            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
                            for j in 0..d {
                                gx[r * d + j] += yr[j] * (gr[j] - dot as f32);
                            }
                        }
                    }
                }
                Op::LogSoftmax { x, axis } => {
                    let y = &node.value;
                    let (outer, len, inner) = axis_split(&node.shape, *axis);
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for o in 0..outer {
                            for i in 0..inner {
                                let at = |a: usize| o * len * inner + a * inner + i;
                                let gsum: f64 = (0..len).map(|a| g[at(a)] as f64).sum();
                                for a in 0..len {
                                    let p = (y[at(a)] as f64).exp();
                                    gx[at(a)] += (g[at(a)] as f64 - p * gsum) as f32;
                                }
                            }
                        }
                    }
                }
                Op::Relu(x) => {
                    let xv = &nodes[x.0].value;
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for i in 0..g.len() {
                            if xv[i] > 0.0 {
                                gx[i] += g[i];
                            }
                        }
                    }
                }
                Op::Sum(x) => {
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        gx.iter_mut().for_each(|v| *v += g[0]);
                    }
                }
                Op::WeightedNll { logp, weights, scale } => {
                    if let Some(gl) = slot(&mut grads, nodes, *logp) {
                        let c = -(*scale) * g[0] as f64;
                        for (a, &w) in gl.iter_mut().zip(weights) {
                            *a += (c * w as f64) as f32;
                        }
                    }
                }
            }
        }

        for (idx, g) in leaf_grads {
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }
}

/// Gradient buffer for `v`, allocated on demand; `None` when `v` does not
/// need one.
fn slot<'a>(grads: &'a mut [Option<Vec<f32>>], nodes: &[Node], v: Var) -> Option<&'a mut Vec<f32>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
}

fn add_into(dst: Option<&mut Vec<f32>>, src: &[f32]) {
    if let Some(dst) = dst {
        dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// For each output position of a permuted tensor, the flat input index it
/// reads from.
fn permute_index(in_shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let rank = in_shape.len();
    assert_eq!(perm.len(), rank, "permute: rank");
    let mut seen = vec![false; rank];
    for &p in perm {
        assert!(p < rank && !seen[p], "permute: {perm:?} is not a permutation");
        seen[p] = true;
    }
    let mut in_strides = vec![1; rank];
    for a in (0..rank.saturating_sub(1)).rev() {
        in_strides[a] = in_strides[a + 1] * in_shape[a + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let numel: usize = in_shape.iter().product();
    let mut out = Vec::with_capacity(numel);
    let mut counter = vec![0usize; rank];
    for _ in 0..numel {
        out.push(counter.iter().zip(&strides).map(|(c, s)| c * s).sum());
        for a in (0..rank).rev() {
            counter[a] += 1;
            if counter[a] < out_shape[a] {
                break;
            }
            counter[a] = 0;
        }
    }
    out
}

struct MatMulPlan {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    shared_b: bool,
    trans_b: bool,
}

impl MatMulPlan {
    fn new(ashape: &[usize], bshape: &[usize], trans_b: bool) -> Self {
        assert!(ashape.len() >= 2 && bshape.len() >= 2, "matmul needs rank >= 2");
        let (m, k) = (ashape[ashape.len() - 2], ashape[ashape.len() - 1]);
        let (bk, n) = if trans_b {
            (bshape[bshape.len() - 1], bshape[bshape.len() - 2])
        } else {
            (bshape[bshape.len() - 2], bshape[bshape.len() - 1])
        };
        assert_eq!(k, bk, "matmul inner dims {ashape:?} x {bshape:?} (trans_b={trans_b})");
        let batch: usize = ashape[..ashape.len() - 2].iter().product();
        let shared_b = bshape.len() == 2;
        if !shared_b {
            assert_eq!(&ashape[..ashape.len() - 2], &bshape[..bshape.len() - 2], "matmul batch dims");
        }
        MatMulPlan { batch, m, k, n, shared_b, trans_b }
    }

    fn forward(&self, a: &[f32], b: &[f32], out: &mut [f32]) {
        let (m, k, n) = (self.m, self.k, self.n);
        if self.shared_b {
            gemm(Gemm::new(self.batch * m, k, n).trans_b(self.trans_b), a, b, out);
        } else {
            for i in 0..self.batch {
                gemm(
                    Gemm::new(m, k, n).trans_b(self.trans_b),
                    &a[i * m * k..(i + 1) * m * k],
                    &b[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
        }
    }

    // dA = dC · op(B)^T
    fn grad_a(&self, g: &[f32], b: &[f32], ga: &mut [f32]) {
        let (m, k, n) = (self.m, self.k, self.n);
        let spec = |rows| Gemm::new(rows, n, k).trans_b(!self.trans_b).accumulate(true);
        if self.shared_b {
            gemm(spec(self.batch * m), g, b, ga);
        } else {
            for i in 0..self.batch {
                gemm(
                    spec(m),
                    &g[i * m * n..(i + 1) * m * n],
                    &b[i * k * n..(i + 1) * k * n],
                    &mut ga[i * m * k..(i + 1) * m * k],
                );
            }
        }
    }

    // dB = A^T · dC, or dC^T · A when B is stored transposed.
    fn grad_b(&self, g: &[f32], a: &[f32], gb: &mut [f32]) {
        let (m, k, n) = (self.m, self.k, self.n);
        let run = |rows: usize, a: &[f32], g: &[f32], gb: &mut [f32]| {
            if self.trans_b {
                gemm(Gemm::new(n, rows, k).trans_a(true).accumulate(true), g, a, gb);
            } else {
                gemm(Gemm::new(k, rows, n).trans_a(true).accumulate(true), a, g, gb);
            }
        };
        if self.shared_b {
            run(self.batch * m, a, g, gb);
        } else {
            for i in 0..self.batch {
                run(m, &a[i * m * k..(i + 1) * m * k], &g[i * m * n..(i + 1) * m * n], &mut gb[i * k * n..(i + 1) * k * n]);
            }
        }
    }
}
