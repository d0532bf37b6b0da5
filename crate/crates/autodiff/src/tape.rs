//! Operation tape and reverse-mode accumulation.
//!
//! A [`Tape`] records every operation as a node holding its output. Calling
//! [`Tape::backward`] on a scalar node walks the nodes in reverse insertion
//! order (a valid reverse topological order, since inputs always precede the
//! nodes that consume them) and accumulates adjoints.
//!
//! Tapes are single-use: build one per training step and drop it afterwards.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AutodiffError, Result};
use crate::params::{ParamId, ParamSet};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Matmul,
    EmbeddingLookup,
    Add,
    Sub,
    Mul,
    Scale,
    Dot,
    Sum,
    Mean,
    Sigmoid,
    Tanh,
    Relu,
    LogSigmoid,
    SoftmaxRows,
    Concat,
    Reshape,
    Transpose,
    BiasAdd,
    ConvH,
    MaxOverTime,
    Dropout,
    SqL2Dist,
}

const OP_NAMES: &[(OpKind, &str)] = &[
    (OpKind::Leaf, "leaf"),
    (OpKind::Matmul, "matmul"),
    (OpKind::EmbeddingLookup, "embedding_lookup"),
    (OpKind::Add, "add"),
    (OpKind::Sub, "sub"),
    (OpKind::Mul, "mul"),
    (OpKind::Scale, "scale"),
    (OpKind::Dot, "dot"),
    (OpKind::Sum, "sum"),
    (OpKind::Mean, "mean"),
    (OpKind::Sigmoid, "sigmoid"),
    (OpKind::Tanh, "tanh"),
    (OpKind::Relu, "relu"),
    (OpKind::LogSigmoid, "log_sigmoid"),
    (OpKind::SoftmaxRows, "softmax_rows"),
    (OpKind::Concat, "concat"),
    (OpKind::Reshape, "reshape"),
    (OpKind::Transpose, "transpose"),
    (OpKind::BiasAdd, "bias_add"),
    (OpKind::ConvH, "conv_h"),
    (OpKind::MaxOverTime, "max_over_time"),
    (OpKind::Dropout, "dropout"),
    (OpKind::SqL2Dist, "sq_l2_dist"),
];

impl OpKind {
    pub fn name(self) -> &'static str {
        OP_NAMES
            .iter()
            .find(|(k, _)| *k == self)
            .map(|(_, n)| *n)
            .unwrap_or("?")
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = AutodiffError;

    fn from_str(s: &str) -> Result<Self> {
        OP_NAMES
            .iter()
            .find(|(k, n)| *n == s && *k != OpKind::Leaf)
            .map(|(k, _)| *k)
            .ok_or_else(|| AutodiffError::UnknownOp(s.to_string()))
    }
}

/// Reduction target for `sum` and `mean`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    /// Every element, producing a rank-0 scalar.
    All,
    /// Axis 0 of a matrix: `[r, c] -> [c]`.
    Rows,
    /// The last axis of a matrix: `[r, c] -> [r]`.
    Cols,
}

/// Per-op attributes.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Attrs {
    #[default]
    None,
    /// Row indices for `embedding_lookup`.
    Indices(Vec<usize>),
    /// Target for `sum` / `mean`; `None` means [`Reduce::All`].
    Reduce(Reduce),
    /// Target shape for `reshape`.
    Shape(Vec<usize>),
    /// Axis for `concat`.
    Axis(usize),
    /// Constant multiplier for `scale`.
    Factor(f64),
    /// Keep probability for `dropout`.
    KeepProb(f64),
}

#[derive(Debug, Clone)]
enum Saved {
    None,
    Indices(Vec<usize>),
    Reduce(Reduce),
    Axis(usize),
    Factor(f64),
    Mask(Vec<f64>),
    Argmax(Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    kind: OpKind,
    inputs: Vec<NodeId>,
    saved: Saved,
    value: Tensor,
    param: Option<ParamId>,
}

/// Records operations for a single forward/backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    training: bool,
    rng: ChaCha8Rng,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_mismatch(op: OpKind, expected: impl Into<String>, actual: impl fmt::Debug) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op: op.name(),
        expected: expected.into(),
        actual: format!("{actual:?}"),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

/// Output shape of an elementwise binary op, allowing only scalar-with-tensor.
fn broadcast_shape(op: OpKind, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() {
        Ok(a.shape().to_vec())
    } else if a.len() == 1 {
        Ok(b.shape().to_vec())
    } else if b.len() == 1 {
        Ok(a.shape().to_vec())
    } else {
        Err(shape_mismatch(
            op,
            format!("{:?} or a one-element tensor", a.shape()),
            b.shape(),
        ))
    }
}

fn elementwise(a: &Tensor, b: &Tensor, shape: Vec<usize>, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let n: usize = shape.iter().product();
    let ad = a.data();
    let bd = b.data();
    let data = (0..n)
        .map(|k| {
            let x = if ad.len() == 1 { ad[0] } else { ad[k] };
            let y = if bd.len() == 1 { bd[0] } else { bd[k] };
            f(x, y)
        })
        .collect();
    Tensor::from_parts(shape, data)
}

/// Adds `g` into the gradient of an operand that may have been broadcast.
fn acc_broadcast(target: &mut Tensor, g: &[f64], factor: impl Fn(usize) -> f64) {
    let t = target.data_mut();
    if t.len() == g.len() {
        for (k, tv) in t.iter_mut().enumerate() {
            *tv += g[k] * factor(k);
        }
    } else {
        t[0] += g.iter().enumerate().map(|(k, gv)| gv * factor(k)).sum::<f64>();
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// `[r, c]` for a matrix, `[1, c]` for a vector (treated as one row).
fn rows_cols(t: &Tensor) -> Option<(usize, usize)> {
    match t.shape() {
        [c] => Some((1, *c)),
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

impl Tape {
    /// Inference-mode tape: dropout is the identity.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Training-mode tape whose dropout masks are drawn from `seed`.
    pub fn training(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, node: NodeId) -> &Tensor {
        &self.nodes[node.0].value
    }

    pub fn kind(&self, node: NodeId) -> OpKind {
        self.nodes[node.0].kind
    }

    /// A leaf that never receives a parameter gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(OpKind::Leaf, Vec::new(), Saved::None, value, None)
    }

    /// A leaf holding a copy of parameter `id`; its gradient is reported by
    /// [`Gradients::params`].
    pub fn param(&mut self, set: &ParamSet, id: ParamId) -> NodeId {
        self.push(OpKind::Leaf, Vec::new(), Saved::None, set.get(id).clone(), Some(id))
    }

    fn push(
        &mut self,
        kind: OpKind,
        inputs: Vec<NodeId>,
        saved: Saved,
        value: Tensor,
        param: Option<ParamId>,
    ) -> NodeId {
        self.nodes.push(Node {
            kind,
            inputs,
            saved,
            value,
            param,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Applies an op looked up by name, e.g. `"softmax_rows"`.
    pub fn apply_named(&mut self, op: &str, inputs: &[NodeId], attrs: Attrs) -> Result<NodeId> {
        let kind = op.parse()?;
        self.apply(kind, inputs, attrs)
    }

    /// Appends `kind(inputs)` to the tape after checking shapes.
    pub fn apply(&mut self, kind: OpKind, inputs: &[NodeId], attrs: Attrs) -> Result<NodeId> {
        for id in inputs {
            if id.0 >= self.nodes.len() {
                return Err(AutodiffError::UnknownNode(id.0));
            }
        }
        let arity = |n: usize| {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(AutodiffError::Arity {
                    op: kind.name(),
                    expected: n,
                    actual: inputs.len(),
                })
            }
        };
        let bad_attr = |msg: &str| AutodiffError::InvalidAttr {
            op: kind.name(),
            message: msg.to_string(),
        };

        let (value, saved) = match kind {
            OpKind::Leaf => return Err(bad_attr("leaves are created with constant() or param()")),
            OpKind::Add | OpKind::Sub | OpKind::Mul => {
                arity(2)?;
                let a = self.value(inputs[0]);
                let b = self.value(inputs[1]);
                let shape = broadcast_shape(kind, a, b)?;
                let v = match kind {
                    OpKind::Add => elementwise(a, b, shape, |x, y| x + y),
                    OpKind::Sub => elementwise(a, b, shape, |x, y| x - y),
                    _ => elementwise(a, b, shape, |x, y| x * y),
                };
                (v, Saved::None)
            }
            OpKind::Scale => {
                arity(1)?;
                let Attrs::Factor(c) = attrs else {
                    return Err(bad_attr("expected Factor"));
                };
                let a = self.value(inputs[0]);
                let data = a.data().iter().map(|x| x * c).collect();
                (Tensor::from_parts(a.shape().to_vec(), data), Saved::Factor(c))
            }
            OpKind::Matmul => {
                arity(2)?;
                let a = self.value(inputs[0]);
                let b = self.value(inputs[1]);
                let (Some((m, k)), Some((k2, n))) = (a.dims2(), b.dims2()) else {
                    return Err(shape_mismatch(kind, "two rank-2 operands", (a.shape(), b.shape())));
                };
                if k != k2 {
                    return Err(shape_mismatch(kind, format!("[{k}, _] on the right"), b.shape()));
                }
                let data = matmul_raw(a.data(), b.data(), m, k, n);
                (Tensor::from_parts(vec![m, n], data), Saved::None)
            }
            OpKind::Transpose => {
                arity(1)?;
                let a = self.value(inputs[0]);
                let Some((r, c)) = a.dims2() else {
                    return Err(shape_mismatch(kind, "rank-2 operand", a.shape()));
                };
                (
                    Tensor::from_parts(vec![c, r], transpose_raw(a.data(), r, c)),
                    Saved::None,
                )
            }
            OpKind::EmbeddingLookup => {
                arity(1)?;
                let Attrs::Indices(indices) = attrs else {
                    return Err(bad_attr("expected Indices"));
                };
                let table = self.value(inputs[0]);
                let Some((n, d)) = table.dims2() else {
                    return Err(shape_mismatch(kind, "rank-2 table", table.shape()));
                };
                if indices.is_empty() {
                    return Err(bad_attr("empty index list"));
                }
                let mut data = Vec::with_capacity(indices.len() * d);
                for &i in &indices {
                    if i >= n {
                        return Err(AutodiffError::IndexOutOfRange {
                            op: kind.name(),
                            index: i,
                            extent: n,
                        });
                    }
                    data.extend_from_slice(table.row(i));
                }
                (
                    Tensor::from_parts(vec![indices.len(), d], data),
                    Saved::Indices(indices),
                )
            }
            OpKind::Dot | OpKind::SqL2Dist => {
                arity(2)?;
                let a = self.value(inputs[0]);
                let b = self.value(inputs[1]);
                if a.shape() != b.shape() || a.rank() == 0 || a.rank() > 2 {
                    return Err(shape_mismatch(
                        kind,
                        format!("{:?} (rank 1 or 2)", a.shape()),
                        b.shape(),
                    ));
                }
                let (rows, cols) = rows_cols(a).expect("rank checked");
                let data: Vec<f64> = (0..rows)
                    .map(|r| {
                        let x = &a.data()[r * cols..(r + 1) * cols];
                        let y = &b.data()[r * cols..(r + 1) * cols];
                        if kind == OpKind::Dot {
                            x.iter().zip(y).map(|(p, q)| p * q).sum()
                        } else {
                            x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum()
                        }
                    })
                    .collect();
                let shape = if a.rank() == 1 { vec![] } else { vec![rows] };
                (Tensor::from_parts(shape, data), Saved::None)
            }
            OpKind::Sum | OpKind::Mean => {
                arity(1)?;
                let reduce = match attrs {
                    Attrs::None => Reduce::All,
                    Attrs::Reduce(r) => r,
                    _ => return Err(bad_attr("expected Reduce")),
                };
                let a = self.value(inputs[0]);
                let (shape, mut data, count) = match reduce {
                    Reduce::All => (vec![], vec![a.data().iter().sum::<f64>()], a.len()),
                    Reduce::Rows | Reduce::Cols => {
                        let Some((r, c)) = a.dims2() else {
                            return Err(shape_mismatch(kind, "rank-2 operand", a.shape()));
                        };
                        if reduce == Reduce::Rows {
                            let mut out = vec![0.0; c];
                            for row in 0..r {
                                for (o, v) in out.iter_mut().zip(a.row(row)) {
                                    *o += v;
                                }
                            }
                            (vec![c], out, r)
                        } else {
                            let out = (0..r).map(|row| a.row(row).iter().sum()).collect();
                            (vec![r], out, c)
                        }
                    }
                };
                if kind == OpKind::Mean {
                    for v in &mut data {
                        *v /= count as f64;
                    }
                }
                (Tensor::from_parts(shape, data), Saved::Reduce(reduce))
            }
            OpKind::Sigmoid | OpKind::Tanh | OpKind::Relu | OpKind::LogSigmoid => {
                arity(1)?;
                let a = self.value(inputs[0]);
                let f: fn(f64) -> f64 = match kind {
                    OpKind::Sigmoid => sigmoid,
                    OpKind::Tanh => f64::tanh,
                    OpKind::Relu => |x| x.max(0.0),
                    _ => log_sigmoid,
                };
                let data = a.data().iter().map(|&x| f(x)).collect();
                (Tensor::from_parts(a.shape().to_vec(), data), Saved::None)
            }
            OpKind::SoftmaxRows => {
                arity(1)?;
                let a = self.value(inputs[0]);
                let Some((r, c)) = rows_cols(a) else {
                    return Err(shape_mismatch(kind, "rank-1 or rank-2 operand", a.shape()));
                };
                let mut data = a.data().to_vec();
                for row in 0..r {
                    let xs = &mut data[row * c..(row + 1) * c];
                    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for x in xs.iter_mut() {
                        *x = (*x - max).exp();
                        total += *x;
                    }
                    for x in xs.iter_mut() {
                        *x /= total;
                    }
                }
                (Tensor::from_parts(a.shape().to_vec(), data), Saved::None)
            }
            OpKind::Concat => {
                let axis = match attrs {
                    Attrs::None => 0,
                    Attrs::Axis(a) => a,
                    _ => return Err(bad_attr("expected Axis")),
                };
                if inputs.is_empty() {
                    return Err(AutodiffError::Arity {
                        op: kind.name(),
                        expected: 1,
                        actual: 0,
                    });
                }
                let first = self.value(inputs[0]).shape().to_vec();
                if axis >= first.len() {
                    return Err(bad_attr("axis out of range"));
                }
                let mut out_shape = first.clone();
                out_shape[axis] = 0;
                for &id in inputs {
                    let s = self.value(id).shape();
                    let compatible = s.len() == first.len()
                        && s.iter().zip(&first).enumerate().all(|(k, (x, y))| k == axis || x == y);
                    if !compatible {
                        return Err(shape_mismatch(kind, format!("{first:?} except axis {axis}"), s));
                    }
                    out_shape[axis] += s[axis];
                }
                let outer: usize = first[..axis].iter().product();
                let inner: usize = first[axis + 1..].iter().product();
                let mut data = Vec::with_capacity(out_shape.iter().product());
                for o in 0..outer {
                    for &id in inputs {
                        let t = self.value(id);
                        let chunk = t.shape()[axis] * inner;
                        data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
                    }
                }
                (Tensor::from_parts(out_shape, data), Saved::Axis(axis))
            }
            OpKind::Reshape => {
                arity(1)?;
                let Attrs::Shape(shape) = attrs else {
                    return Err(bad_attr("expected Shape"));
                };
                let a = self.value(inputs[0]);
                if shape.iter().product::<usize>() != a.len() || shape.contains(&0) {
                    return Err(shape_mismatch(kind, format!("{} elements", a.len()), &shape));
                }
                (Tensor::from_parts(shape, a.data().to_vec()), Saved::None)
            }
            OpKind::BiasAdd => {
                arity(2)?;
                let x = self.value(inputs[0]);
                let b = self.value(inputs[1]);
                let Some((r, c)) = rows_cols(x) else {
                    return Err(shape_mismatch(kind, "rank-1 or rank-2 input", x.shape()));
                };
                if b.shape() != [c] {
                    return Err(shape_mismatch(kind, format!("[{c}]"), b.shape()));
                }
                let mut data = x.data().to_vec();
                for row in 0..r {
                    for (v, bv) in data[row * c..(row + 1) * c].iter_mut().zip(b.data()) {
                        *v += bv;
                    }
                }
                (Tensor::from_parts(x.shape().to_vec(), data), Saved::None)
            }
            OpKind::ConvH => {
                arity(2)?;
                let x = self.value(inputs[0]);
                let w = self.value(inputs[1]);
                let Some((len, d)) = x.dims2() else {
                    return Err(shape_mismatch(kind, "[L, d] input", x.shape()));
                };
                let &[nf, h, wd] = w.shape() else {
                    return Err(shape_mismatch(kind, "[filters, h, d] filter bank", w.shape()));
                };
                if wd != d || h > len {
                    return Err(shape_mismatch(kind, format!("[_, h <= {len}, {d}]"), w.shape()));
                }
                let steps = len - h + 1;
                let span = h * d;
                let mut data = vec![0.0; steps * nf];
                for t in 0..steps {
                    let window = &x.data()[t * d..t * d + span];
                    for f in 0..nf {
                        let filt = &w.data()[f * span..(f + 1) * span];
                        data[t * nf + f] = window.iter().zip(filt).map(|(p, q)| p * q).sum();
                    }
                }
                (Tensor::from_parts(vec![steps, nf], data), Saved::None)
            }
            OpKind::MaxOverTime => {
                arity(1)?;
                let a = self.value(inputs[0]);
                let Some((steps, n)) = a.dims2() else {
                    return Err(shape_mismatch(kind, "[T, n] input", a.shape()));
                };
                let mut arg = vec![0usize; n];
                let mut data = a.row(0).to_vec();
                for t in 1..steps {
                    for (f, v) in a.row(t).iter().enumerate() {
                        if *v > data[f] {
                            data[f] = *v;
                            arg[f] = t;
                        }
                    }
                }
                (Tensor::from_parts(vec![n], data), Saved::Argmax(arg))
            }
            OpKind::Dropout => {
                arity(1)?;
                let Attrs::KeepProb(keep) = attrs else {
                    return Err(bad_attr("expected KeepProb"));
                };
                if !(keep > 0.0 && keep <= 1.0) {
                    return Err(bad_attr("keep probability must lie in (0, 1]"));
                }
                let a = self.value(inputs[0]).clone();
                if !self.training || keep == 1.0 {
                    (a, Saved::None)
                } else {
                    let mask: Vec<f64> = (0..a.len())
                        .map(|_| {
                            if self.rng.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let data = a.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
                    (Tensor::from_parts(a.shape().to_vec(), data), Saved::Mask(mask))
                }
            }
        };
        Ok(self.push(kind, inputs.to_vec(), saved, value, None))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Matmul, &[a, b], Attrs::None)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Transpose, &[a], Attrs::None)
    }

    pub fn lookup(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        self.apply(OpKind::EmbeddingLookup, &[table], Attrs::Indices(indices.to_vec()))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Add, &[a, b], Attrs::None)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sub, &[a, b], Attrs::None)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Mul, &[a, b], Attrs::None)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.apply(OpKind::Scale, &[a], Attrs::Factor(factor))
    }

    /// Inner product along the last axis: vectors give a scalar, `[r, c]`
    /// matrices give `[r]`.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Dot, &[a, b], Attrs::None)
    }

    /// Squared Euclidean distance along the last axis, shaped like [`Tape::dot`].
    pub fn sq_l2_dist(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::SqL2Dist, &[a, b], Attrs::None)
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sum, &[a], Attrs::None)
    }

    pub fn sum_axis(&mut self, a: NodeId, reduce: Reduce) -> Result<NodeId> {
        self.apply(OpKind::Sum, &[a], Attrs::Reduce(reduce))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Mean, &[a], Attrs::None)
    }

    pub fn mean_axis(&mut self, a: NodeId, reduce: Reduce) -> Result<NodeId> {
        self.apply(OpKind::Mean, &[a], Attrs::Reduce(reduce))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sigmoid, &[a], Attrs::None)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Tanh, &[a], Attrs::None)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Relu, &[a], Attrs::None)
    }

    /// `ln σ(x)`, evaluated without overflow.
    pub fn log_sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::LogSigmoid, &[a], Attrs::None)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::SoftmaxRows, &[a], Attrs::None)
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        self.apply(OpKind::Concat, parts, Attrs::Axis(axis))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.apply(OpKind::Reshape, &[a], Attrs::Shape(shape.to_vec()))
    }

    /// Adds vector `b` to every row of `x`.
    pub fn bias_add(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::BiasAdd, &[x, b], Attrs::None)
    }

    /// Valid full-width convolution of `x: [L, d]` with `filters: [n, h, d]`,
    /// giving `[L - h + 1, n]`.
    pub fn conv_h(&mut self, x: NodeId, filters: NodeId) -> Result<NodeId> {
        self.apply(OpKind::ConvH, &[x, filters], Attrs::None)
    }

    /// Column-wise max of `[T, n]`, giving `[n]`.
    pub fn max_over_time(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::MaxOverTime, &[a], Attrs::None)
    }

    pub fn dropout(&mut self, a: NodeId, keep: f64) -> Result<NodeId> {
        self.apply(OpKind::Dropout, &[a], Attrs::KeepProb(keep))
    }

    /// Reverse-mode accumulation from a one-element `loss` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(AutodiffError::UnknownNode(loss.0));
        }
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::from_parts(loss_value.shape().to_vec(), vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (p, i)))
            .collect();
        Ok(Gradients { grads, shapes, params })
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let gd = g.data();
        let val = |k: usize| &self.nodes[node.inputs[k].0].value;
        let mut acc = |k: usize, f: &mut dyn FnMut(&mut Tensor)| {
            let id = node.inputs[k].0;
            let slot = grads[id].get_or_insert_with(|| self.nodes[id].value.same_shape_zeros());
            f(slot);
        };

        match node.kind {
            OpKind::Leaf => {}
            OpKind::Add => {
                acc(0, &mut |t| acc_broadcast(t, gd, |_| 1.0));
                acc(1, &mut |t| acc_broadcast(t, gd, |_| 1.0));
            }
            OpKind::Sub => {
                acc(0, &mut |t| acc_broadcast(t, gd, |_| 1.0));
                acc(1, &mut |t| acc_broadcast(t, gd, |_| -1.0));
            }
            OpKind::Mul => {
                let (a, b) = (val(0).data(), val(1).data());
                let pick = |x: &[f64], k: usize| if x.len() == 1 { x[0] } else { x[k] };
                acc(0, &mut |t| acc_broadcast(t, gd, |k| pick(b, k)));
                acc(1, &mut |t| acc_broadcast(t, gd, |k| pick(a, k)));
            }
            OpKind::Scale => {
                let Saved::Factor(c) = node.saved else { unreachable!() };
                acc(0, &mut |t| {
                    for (tv, gv) in t.data_mut().iter_mut().zip(gd) {
                        *tv += c * gv;
                    }
                });
            }
            OpKind::Matmul => {
                let (a, b) = (val(0), val(1));
                let (m, k) = a.dims2().expect("checked");
                let n = b.dims2().expect("checked").1;
                let bt = transpose_raw(b.data(), k, n);
                let ga = matmul_raw(gd, &bt, m, n, k);
                let at = transpose_raw(a.data(), m, k);
                let gb = matmul_raw(&at, gd, k, m, n);
                acc(0, &mut |t| add_into(t, &ga));
                acc(1, &mut |t| add_into(t, &gb));
            }
            OpKind::Transpose => {
                let (r, c) = val(0).dims2().expect("checked");
                let gt = transpose_raw(gd, c, r);
                acc(0, &mut |t| add_into(t, &gt));
            }
            OpKind::EmbeddingLookup => {
                let Saved::Indices(ref indices) = node.saved else {
                    unreachable!()
                };
                acc(0, &mut |t| {
                    let d = t.shape()[1];
                    for (row, &i) in indices.iter().enumerate() {
                        for (tv, gv) in t.row_mut(i).iter_mut().zip(&gd[row * d..(row + 1) * d]) {
                            *tv += gv;
                        }
                    }
                });
            }
            OpKind::Dot | OpKind::SqL2Dist => {
                let (a, b) = (val(0), val(1));
                let (_, cols) = rows_cols(a).expect("checked");
                let dist = node.kind == OpKind::SqL2Dist;
                let coef = |k: usize| -> f64 {
                    let gr = gd[k / cols];
                    if dist {
                        2.0 * gr * (a.data()[k] - b.data()[k])
                    } else {
                        gr
                    }
                };
                if dist {
                    acc(0, &mut |t| acc_each(t, coef));
                    acc(1, &mut |t| acc_each(t, |k| -coef(k)));
                } else {
                    acc(0, &mut |t| acc_each(t, |k| coef(k) * b.data()[k]));
                    acc(1, &mut |t| acc_each(t, |k| coef(k) * a.data()[k]));
                }
            }
            OpKind::Sum | OpKind::Mean => {
                let Saved::Reduce(reduce) = node.saved else {
                    unreachable!()
                };
                let a = val(0);
                let (cols, count) = match reduce {
                    Reduce::All => (0, a.len()),
                    Reduce::Rows => (a.shape()[1], a.shape()[0]),
                    Reduce::Cols => (a.shape()[1], a.shape()[1]),
                };
                let norm = if node.kind == OpKind::Mean {
                    1.0 / count as f64
                } else {
                    1.0
                };
                acc(0, &mut |t| {
                    acc_each(t, |k| {
                        let src = match reduce {
                            Reduce::All => gd[0],
                            Reduce::Rows => gd[k % cols],
                            Reduce::Cols => gd[k / cols],
                        };
                        src * norm
                    })
                });
            }
            OpKind::Sigmoid => {
                let y = node.value.data();
                acc(0, &mut |t| acc_each(t, |k| gd[k] * y[k] * (1.0 - y[k])));
            }
            OpKind::Tanh => {
                let y = node.value.data();
                acc(0, &mut |t| acc_each(t, |k| gd[k] * (1.0 - y[k] * y[k])));
            }
            OpKind::Relu => {
                let x = val(0).data();
                acc(0, &mut |t| acc_each(t, |k| if x[k] > 0.0 { gd[k] } else { 0.0 }));
            }
            OpKind::LogSigmoid => {
                let x = val(0).data();
                acc(0, &mut |t| acc_each(t, |k| gd[k] * sigmoid(-x[k])));
            }
            OpKind::SoftmaxRows => {
                let y = &node.value;
                let (r, c) = rows_cols(y).expect("checked");
                let mut gx = vec![0.0; r * c];
                for row in 0..r {
                    let ys = &y.data()[row * c..(row + 1) * c];
                    let gs = &gd[row * c..(row + 1) * c];
                    let inner: f64 = ys.iter().zip(gs).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        gx[row * c + j] = ys[j] * (gs[j] - inner);
                    }
                }
                acc(0, &mut |t| add_into(t, &gx));
            }
            OpKind::Concat => {
                let Saved::Axis(axis) = node.saved else { unreachable!() };
                let out_shape = node.value.shape();
                let outer: usize = out_shape[..axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let total = out_shape[axis] * inner;
                let mut offset = 0;
                for k in 0..node.inputs.len() {
                    let chunk = val(k).shape()[axis] * inner;
                    acc(k, &mut |t| {
                        let td = t.data_mut();
                        for o in 0..outer {
                            let src = &gd[o * total + offset..o * total + offset + chunk];
                            for (tv, gv) in td[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                *tv += gv;
                            }
                        }
                    });
                    offset += chunk;
                }
            }
            OpKind::Reshape => acc(0, &mut |t| add_into(t, gd)),
            OpKind::BiasAdd => {
                acc(0, &mut |t| add_into(t, gd));
                acc(1, &mut |t| {
                    let c = t.len();
                    for (k, gv) in gd.iter().enumerate() {
                        t.data_mut()[k % c] += gv;
                    }
                });
            }
            OpKind::ConvH => {
                let (x, w) = (val(0), val(1));
                let d = x.shape()[1];
                let (nf, h) = (w.shape()[0], w.shape()[1]);
                let span = h * d;
                let steps = node.value.shape()[0];
                let mut gx = vec![0.0; x.len()];
                let mut gw = vec![0.0; w.len()];
                for t in 0..steps {
                    for f in 0..nf {
                        let gv = gd[t * nf + f];
                        if gv == 0.0 {
                            continue;
                        }
                        let filt = &w.data()[f * span..(f + 1) * span];
                        let window = &x.data()[t * d..t * d + span];
                        for j in 0..span {
                            gx[t * d + j] += gv * filt[j];
                            gw[f * span + j] += gv * window[j];
                        }
                    }
                }
                acc(0, &mut |t| add_into(t, &gx));
                acc(1, &mut |t| add_into(t, &gw));
            }
            OpKind::MaxOverTime => {
                let Saved::Argmax(ref arg) = node.saved else {
                    unreachable!()
                };
                acc(0, &mut |t| {
                    let n = t.shape()[1];
                    for (f, &row) in arg.iter().enumerate() {
                        t.data_mut()[row * n + f] += gd[f];
                    }
                });
            }
            OpKind::Dropout => match node.saved {
                Saved::Mask(ref mask) => acc(0, &mut |t| acc_each(t, |k| gd[k] * mask[k])),
                _ => acc(0, &mut |t| add_into(t, gd)),
            },
        }
    }
}

fn add_into(t: &mut Tensor, g: &[f64]) {
    for (tv, gv) in t.data_mut().iter_mut().zip(g) {
        *tv += gv;
    }
}

fn acc_each(t: &mut Tensor, f: impl Fn(usize) -> f64) {
    for (k, tv) in t.data_mut().iter_mut().enumerate() {
        *tv += f(k);
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `node`; zeros if `node` does not
    /// feed the loss.
    pub fn node(&self, node: NodeId) -> Tensor {
        match self.grads.get(node.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[node.0].clone()),
        }
    }

    /// Gradient for parameter `id`, summed over every leaf that copied it.
    /// `None` when no such leaf feeds the loss.
    pub fn param(&self, id: ParamId) -> Option<Tensor> {
        let mut total: Option<Tensor> = None;
        for &(p, node) in &self.params {
            if p != id {
                continue;
            }
            if let Some(g) = self.grads.get(node).and_then(Option::as_ref) {
                match total.as_mut() {
                    Some(t) => add_into(t, g.data()),
                    None => total = Some(g.clone()),
                }
            }
        }
        total
    }

    /// All parameter gradients that reached the loss, ordered by id.
    pub fn params(&self) -> Vec<(ParamId, Tensor)> {
        let mut ids: Vec<ParamId> = self.params.iter().map(|(p, _)| *p).collect();
        ids.sort();
        ids.dedup();
        ids.into_iter()
            .filter_map(|id| self.param(id).map(|g| (id, g)))
            .collect()
    }
}
