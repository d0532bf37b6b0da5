//! Training loop, initialization and small tape helpers shared by the models.

use std::collections::HashMap;

use drec_autodiff::{NodeId, OptimizerState, ParamSet, Result as AdResult, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{InteractionTable, NegativeSampler};
use crate::error::{Error, Result};

/// Standard deviation of every randomly initialized weight.
pub const INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub optimizer: Optimizer,
    pub lr: f64,
    pub l2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Negatives per positive for sampled losses.
    pub neg_samples: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            lr: 0.01,
            l2: 0.0,
            epochs: 20,
            batch_size: 256,
            neg_samples: 1,
            seed: 0,
        }
    }
}

impl TrainOptions {
    pub(crate) fn optimizer_state(&self) -> OptimizerState {
        match self.optimizer {
            Optimizer::Sgd => OptimizerState::sgd(self.lr),
            Optimizer::Adam => OptimizerState::adam(self.lr),
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::InvalidArgument(format!("l2 must be >= 0, got {}", self.l2)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mean training loss of each epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub losses: Vec<f64>,
}

impl TrainTrace {
    pub fn first(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// Generator for parameter initialization, independent of the training stream.
pub(crate) fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

pub(crate) fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let dist = Normal::new(0.0, INIT_STD).expect("valid std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape has no zero extents")
}

/// Glorot-uniform `[fan_in, fan_out]` weights, for dense layers.
pub(crate) fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = fan_in * fan_out;
    Tensor::new(vec![fan_in, fan_out], (0..n).map(|_| rng.random_range(-a..a)).collect())
        .expect("shape has no zero extents")
}

/// Shuffled minibatch gradient descent.
///
/// `build` receives the current parameters, the example indices of one batch
/// and the training generator, and returns a tape with a scalar loss.
/// `after_step` runs after every optimizer update (projections, padding).
pub(crate) fn train_loop<B, A>(
    params: &mut ParamSet,
    opts: &TrainOptions,
    n_examples: usize,
    mut build: B,
    mut after_step: A,
) -> Result<TrainTrace>
where
    B: FnMut(&ParamSet, &[usize], &mut ChaCha8Rng) -> Result<Option<(Tape, NodeId)>>,
    A: FnMut(&mut ParamSet),
{
    opts.validate()?;
    if n_examples == 0 {
        return Err(Error::Empty("no training examples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut optimizer = opts.optimizer_state();
    let mut order: Vec<usize> = (0..n_examples).collect();
    let mut trace = TrainTrace::default();
    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(opts.batch_size) {
            let Some((tape, loss)) = build(params, chunk, &mut rng)? else {
                continue;
            };
            let value = tape.value(loss).item().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, loss: value });
            }
            let grads = tape.backward(loss)?;
            optimizer.step(params, &grads.params())?;
            after_step(params);
            total += value;
            batches += 1;
        }
        let mean = if batches == 0 { 0.0 } else { total / batches as f64 };
        log::debug!("epoch {epoch}: loss {mean:.6}");
        trace.losses.push(mean);
    }
    Ok(trace)
}

/// `factor · Σ x²` over every node.
pub(crate) fn sq_penalty(tape: &mut Tape, nodes: &[NodeId], factor: f64) -> AdResult<Option<NodeId>> {
    if factor == 0.0 || nodes.is_empty() {
        return Ok(None);
    }
    let mut total: Option<NodeId> = None;
    for &x in nodes {
        let sq = tape.mul(x, x)?;
        let s = tape.sum(sq)?;
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    let t = total.expect("non-empty");
    Ok(Some(tape.scale(t, factor)?))
}

/// `loss + penalty` when a penalty exists.
pub(crate) fn with_penalty(tape: &mut Tape, loss: NodeId, penalty: Option<NodeId>) -> AdResult<NodeId> {
    match penalty {
        Some(p) => tape.add(loss, p),
        None => Ok(loss),
    }
}

/// Looks up a `[n, 1]` table and flattens the result to `[len]`.
pub(crate) fn lookup_column(tape: &mut Tape, table: NodeId, indices: &[usize]) -> AdResult<NodeId> {
    let rows = tape.lookup(table, indices)?;
    tape.reshape(rows, &[indices.len()])
}

/// Mean of `−ln σ(sign · logit)`: binary cross-entropy with labels folded into
/// signs (`+1` positive, `−1` negative).
pub(crate) fn signed_logistic(tape: &mut Tape, logits: NodeId, signs: Vec<f64>) -> AdResult<NodeId> {
    let n = signs.len();
    let s = tape.constant(Tensor::new(vec![n], signs)?);
    let z = tape.mul(logits, s)?;
    let ls = tape.log_sigmoid(z)?;
    let m = tape.mean(ls)?;
    tape.scale(m, -1.0)
}

/// Rescales each row of a `[n, d]` tensor whose norm exceeds `radius`.
pub(crate) fn clip_rows(t: &mut Tensor, radius: f64) {
    let Some((rows, _)) = t.dims2() else { return };
    for r in 0..rows {
        let row = t.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > radius {
            let s = radius / norm;
            for v in row.iter_mut() {
                *v *= s;
            }
        }
    }
}

/// Largest Euclidean norm over the rows of a matrix.
pub fn max_row_norm(t: &Tensor) -> f64 {
    let Some((rows, _)) = t.dims2() else { return 0.0 };
    (0..rows)
        .map(|r| t.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

pub(crate) fn zero_row(t: &mut Tensor, row: usize) {
    t.row_mut(row).iter_mut().for_each(|v| *v = 0.0);
}

pub(crate) fn check_id(what: &'static str, id: usize, limit: usize) -> Result<()> {
    if id < limit {
        Ok(())
    } else {
        Err(Error::IdOutOfRange { what, id, limit })
    }
}

/// Dot product of two equal-length slices.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `(user, positive, negative)` triples for a batch of observed pairs, `n`
/// negatives each. Pairs whose user has no unconsumed item are skipped and
/// counted.
pub(crate) fn sample_triples(
    sampler: &NegativeSampler,
    pairs: &[(usize, usize)],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<(usize, usize, usize)>, usize)> {
    let mut out = Vec::with_capacity(pairs.len() * n);
    let mut skipped = 0;
    for &(u, i) in pairs {
        match sampler.sample(u, n, &[], rng) {
            Ok(js) => out.extend(js.into_iter().map(|j| (u, i, j))),
            Err(Error::NoNegatives(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((out, skipped))
}

/// Observed `(user, item)` pairs of a table.
pub(crate) fn pairs_of(train: &InteractionTable) -> Vec<(usize, usize)> {
    train.interactions().iter().map(|x| (x.user, x.item)).collect()
}

/// Named tensors handed to a model's restore function.
#[derive(Debug, Default)]
pub struct TensorBag {
    tensors: HashMap<String, Tensor>,
}

impl TensorBag {
    pub fn new(tensors: impl IntoIterator<Item = (String, Tensor)>) -> Self {
        Self {
            tensors: tensors.into_iter().collect(),
        }
    }

    /// Removes `name`, checking its rank.
    pub fn take(&mut self, name: &str, rank: usize) -> Result<Tensor> {
        let t = self
            .tensors
            .remove(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing tensor `{name}`")))?;
        if t.rank() != rank {
            return Err(Error::InvalidArgument(format!(
                "tensor `{name}` has rank {}, expected {rank}",
                t.rank()
            )));
        }
        Ok(t)
    }

    /// Removes `name`, requiring an exact shape.
    pub fn take_shaped(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let t = self.take(name, shape.len())?;
        if t.shape() != shape {
            return Err(Error::InvalidArgument(format!(
                "tensor `{name}` has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    }

    /// Errors if anything was left over.
    pub fn finish(self) -> Result<()> {
        if self.tensors.is_empty() {
            return Ok(());
        }
        let mut names: Vec<String> = self.tensors.into_keys().collect();
        names.sort();
        Err(Error::InvalidArgument(format!(
            "unexpected tensors: {}",
            names.join(", ")
        )))
    }
}

/// Parameter tensors followed by context tensors, as stored in checkpoints.
pub(crate) fn collect_tensors(params: &ParamSet, context: &[(&str, &Tensor)]) -> Vec<(String, Tensor)> {
    params
        .iter()
        .map(|(_, name, t)| (name.to_string(), t.clone()))
        .chain(context.iter().map(|(n, t)| (n.to_string(), (*t).clone())))
        .collect()
}

/// Integer ids stored in an `f64` tensor.
pub(crate) fn ids_from(t: &Tensor) -> Vec<usize> {
    t.data().iter().map(|&v| v as usize).collect()
}

pub(crate) fn ids_tensor(shape: Vec<usize>, ids: &[usize]) -> Tensor {
    Tensor::new(shape, ids.iter().map(|&i| i as f64).collect()).expect("consistent id tensor")
}
