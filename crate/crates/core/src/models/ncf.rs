//! Neural collaborative filtering: GMF, MLP and their fusion NeuMF, trained
//! jointly with binary cross-entropy on sampled negatives.

use std::fmt;
use std::str::FromStr;

use drec_autodiff::{NodeId, ParamId, ParamSet, Result as AdResult, Tape, Tensor};

use crate::data::{InteractionTable, NegativeSampler};
use crate::error::{Error, Result};
use crate::metrics::Scorer;
use crate::models::common::{
    check_id, collect_tensors, glorot, init_rng, normal, pairs_of, sample_triples, signed_logistic, sq_penalty,
    train_loop, with_penalty, TensorBag, TrainOptions, TrainTrace,
};
use crate::models::{Recommender, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NcfVariant {
    Gmf,
    Mlp,
    NeuMf,
}

impl NcfVariant {
    fn has_gmf(self) -> bool {
        matches!(self, Self::Gmf | Self::NeuMf)
    }

    fn has_mlp(self) -> bool {
        matches!(self, Self::Mlp | Self::NeuMf)
    }
}

impl fmt::Display for NcfVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gmf => "gmf",
            Self::Mlp => "mlp",
            Self::NeuMf => "neumf",
        })
    }
}

impl FromStr for NcfVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmf" => Ok(Self::Gmf),
            "mlp" => Ok(Self::Mlp),
            "neumf" => Ok(Self::NeuMf),
            other => Err(Error::InvalidArgument(format!("unknown NCF variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
struct Tower {
    p: ParamId,
    q: ParamId,
    layers: Vec<(ParamId, ParamId)>,
}

#[derive(Debug, Clone)]
pub struct Ncf {
    params: ParamSet,
    variant: NcfVariant,
    gmf: Option<(ParamId, ParamId)>,
    mlp: Option<Tower>,
    /// `[width, 1]` output weights and `[1]` bias (no bias for plain GMF).
    out_w: ParamId,
    out_b: Option<ParamId>,
    n_users: usize,
    n_items: usize,
}

/// `[2k, k, k/2]`, the default tower.
pub fn default_layers(k: usize) -> Vec<usize> {
    vec![2 * k, k, k / 2]
}

fn check_layers(k: usize, layers: &[usize]) -> Result<()> {
    if layers.len() < 2 || layers[0] != 2 * k || layers.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "MLP layers must start at 2k = {} and have at least two positive sizes, got {layers:?}",
            2 * k
        )));
    }
    Ok(())
}

impl Ncf {
    /// `layers` is the MLP tower including its `2k` input width; ignored for
    /// GMF.
    pub fn new(
        variant: NcfVariant,
        n_users: usize,
        n_items: usize,
        k: usize,
        layers: &[usize],
        seed: u64,
    ) -> Result<Self> {
        if k == 0 || n_users == 0 || n_items == 0 {
            return Err(Error::InvalidArgument("NCF needs k, n_users, n_items >= 1".into()));
        }
        let mut rng = init_rng(seed);
        let mut params = ParamSet::new();
        let mut width = 0;
        let gmf = variant.has_gmf().then(|| {
            width += k;
            (
                params.add("P_gmf", normal(&mut rng, &[n_users, k])),
                params.add("Q_gmf", normal(&mut rng, &[n_items, k])),
            )
        });
        let mlp = if variant.has_mlp() {
            check_layers(k, layers)?;
            let p = params.add("P_mlp", normal(&mut rng, &[n_users, k]));
            let q = params.add("Q_mlp", normal(&mut rng, &[n_items, k]));
            width += layers[layers.len() - 1];
            let layers = layers
                .windows(2)
                .enumerate()
                .map(|(l, w)| {
                    (
                        params.add(format!("W{}", l + 1), glorot(&mut rng, w[0], w[1])),
                        params.add(format!("b{}", l + 1), Tensor::zeros(vec![w[1]])),
                    )
                })
                .collect();
            Some(Tower { p, q, layers })
        } else {
            None
        };
        let out_w = params.add("h", normal(&mut rng, &[width, 1]));
        let out_b = (variant != NcfVariant::Gmf).then(|| params.add("h_bias", Tensor::vector(vec![0.0])));
        Ok(Self {
            params,
            variant,
            gmf,
            mlp,
            out_w,
            out_b,
            n_users,
            n_items,
        })
    }

    pub fn variant(&self) -> NcfVariant {
        self.variant
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn output_weights(&self) -> ParamId {
        self.out_w
    }

    /// Logits for aligned user/item lists, plus the looked-up embedding rows.
    fn forward(
        &self,
        params: &ParamSet,
        tape: &mut Tape,
        users: &[usize],
        items: &[usize],
    ) -> AdResult<(NodeId, Vec<NodeId>)> {
        let n = users.len();
        let mut parts = Vec::new();
        let mut rows = Vec::new();
        if let Some((p, q)) = self.gmf {
            let p = tape.param(params, p);
            let q = tape.param(params, q);
            let pu = tape.lookup(p, users)?;
            let qi = tape.lookup(q, items)?;
            rows.extend([pu, qi]);
            parts.push(tape.mul(pu, qi)?);
        }
        if let Some(tower) = &self.mlp {
            let p = tape.param(params, tower.p);
            let q = tape.param(params, tower.q);
            let pu = tape.lookup(p, users)?;
            let qi = tape.lookup(q, items)?;
            rows.extend([pu, qi]);
            let mut x = tape.concat(&[pu, qi], 1)?;
            for &(w, b) in &tower.layers {
                let w = tape.param(params, w);
                let b = tape.param(params, b);
                let z = tape.matmul(x, w)?;
                let z = tape.bias_add(z, b)?;
                x = tape.relu(z)?;
            }
            parts.push(x);
        }
        let joined = if parts.len() == 1 {
            parts[0]
        } else {
            tape.concat(&parts, 1)?
        };
        let h = tape.param(params, self.out_w);
        let logits = tape.matmul(joined, h)?;
        let mut logits = tape.reshape(logits, &[n])?;
        if let Some(b) = self.out_b {
            let b = tape.param(params, b);
            logits = tape.add(logits, b)?;
        }
        Ok((logits, rows))
    }

    /// Sigmoid scores for aligned user/item lists.
    pub fn probabilities(&self, users: &[usize], items: &[usize]) -> Result<Vec<f64>> {
        for (&u, &i) in users.iter().zip(items) {
            check_id("user", u, self.n_users)?;
            check_id("item", i, self.n_items)?;
        }
        if users.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let (logits, _) = self.forward(&self.params, &mut tape, users, items)?;
        let p = tape.sigmoid(logits)?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Mean binary cross-entropy over labelled pairs plus `l2 / n` times the
    /// squared embedding rows.
    pub fn loss(
        &self,
        params: &ParamSet,
        tape: &mut Tape,
        examples: &[(usize, usize, bool)],
        l2: f64,
    ) -> AdResult<NodeId> {
        let users: Vec<usize> = examples.iter().map(|e| e.0).collect();
        let items: Vec<usize> = examples.iter().map(|e| e.1).collect();
        let signs = examples.iter().map(|e| if e.2 { 1.0 } else { -1.0 }).collect();
        let (logits, rows) = self.forward(params, tape, &users, &items)?;
        let data = signed_logistic(tape, logits, signs)?;
        let penalty = sq_penalty(tape, &rows, l2 / examples.len() as f64)?;
        with_penalty(tape, data, penalty)
    }

    /// Every observed pair as a positive with `neg_samples` sampled negatives.
    pub fn fit(&mut self, train: &InteractionTable, opts: &TrainOptions) -> Result<TrainTrace> {
        let pairs = pairs_of(train);
        let sampler = NegativeSampler::new(train);
        let model = self.clone();
        train_loop(
            &mut self.params,
            opts,
            pairs.len(),
            |params, idx, rng| {
                let batch: Vec<(usize, usize)> = idx.iter().map(|&k| pairs[k]).collect();
                let examples = labelled(&sampler, &batch, opts.neg_samples, rng)?;
                let mut tape = Tape::new();
                let loss = model.loss(params, &mut tape, &examples, opts.l2)?;
                Ok(Some((tape, loss)))
            },
            |_| {},
        )
    }

    pub fn restore(variant: NcfVariant, k: usize, layers: &[usize], bag: TensorBag) -> Result<Self> {
        let mut bag = bag;
        let mut params = ParamSet::new();
        let mut width = 0;
        let mut dims = None;
        let gmf = if variant.has_gmf() {
            let p = bag.take("P_gmf", 2)?;
            let q = bag.take("Q_gmf", 2)?;
            if p.shape()[1] != k || q.shape()[1] != k {
                return Err(Error::InvalidArgument(format!("GMF width differs from k = {k}")));
            }
            dims = Some((p.shape()[0], q.shape()[0]));
            width += k;
            Some((params.add("P_gmf", p), params.add("Q_gmf", q)))
        } else {
            None
        };
        let mlp = if variant.has_mlp() {
            check_layers(k, layers)?;
            let p = bag.take("P_mlp", 2)?;
            let q = bag.take("Q_mlp", 2)?;
            if p.shape()[1] != k || q.shape()[1] != k {
                return Err(Error::InvalidArgument(format!(
                    "MLP embedding width differs from k = {k}"
                )));
            }
            dims = Some((p.shape()[0], q.shape()[0]));
            let (p, q) = (params.add("P_mlp", p), params.add("Q_mlp", q));
            let mut ls = Vec::new();
            for (l, w) in layers.windows(2).enumerate() {
                let wt = bag.take_shaped(&format!("W{}", l + 1), &[w[0], w[1]])?;
                let bt = bag.take_shaped(&format!("b{}", l + 1), &[w[1]])?;
                ls.push((
                    params.add(format!("W{}", l + 1), wt),
                    params.add(format!("b{}", l + 1), bt),
                ));
            }
            width += layers[layers.len() - 1];
            Some(Tower { p, q, layers: ls })
        } else {
            None
        };
        let out_w = params.add("h", bag.take_shaped("h", &[width, 1])?);
        let out_b = if variant != NcfVariant::Gmf {
            Some(params.add("h_bias", bag.take_shaped("h_bias", &[1])?))
        } else {
            None
        };
        bag.finish()?;
        let (n_users, n_items) = dims.expect("at least one embedding pair");
        Ok(Self {
            params,
            variant,
            gmf,
            mlp,
            out_w,
            out_b,
            n_users,
            n_items,
        })
    }
}

/// Positives labelled `true` followed by their sampled negatives.
fn labelled(
    sampler: &NegativeSampler,
    batch: &[(usize, usize)],
    neg: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Vec<(usize, usize, bool)>> {
    let mut out: Vec<(usize, usize, bool)> = batch.iter().map(|&(u, i)| (u, i, true)).collect();
    if neg > 0 {
        let (triples, _) = sample_triples(sampler, batch, neg, rng)?;
        out.extend(triples.into_iter().map(|(u, _, j)| (u, j, false)));
    }
    Ok(out)
}

/// A GMF model trained on `train`; equivalent to the `gmf` variant.
pub fn fit_gmf(train: &InteractionTable, k: usize, opts: &TrainOptions) -> Result<(Ncf, TrainTrace)> {
    let mut m = Ncf::new(NcfVariant::Gmf, train.n_users(), train.n_items(), k, &[], opts.seed)?;
    let trace = m.fit(train, opts)?;
    Ok((m, trace))
}

impl Scorer for Ncf {
    fn score(&self, user: usize, items: &[usize]) -> Result<Vec<f64>> {
        self.probabilities(&vec![user; items.len()], items)
    }
}

impl Recommender for Ncf {
    fn name(&self) -> &'static str {
        match self.variant {
            NcfVariant::Gmf => "gmf",
            NcfVariant::Mlp => "mlp",
            NcfVariant::NeuMf => "neumf",
        }
    }

    fn task(&self) -> Task {
        Task::Ranking
    }

    fn n_users(&self) -> usize {
        self.n_users
    }

    fn n_items(&self) -> usize {
        self.n_items
    }

    fn tensors(&self) -> Vec<(String, Tensor)> {
        collect_tensors(&self.params, &[])
    }
}
