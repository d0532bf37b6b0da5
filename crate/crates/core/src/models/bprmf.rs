//! Matrix factorization trained with the BPR pairwise loss.

use drec_autodiff::{NodeId, ParamId, ParamSet, Result as AdResult, Tape, Tensor};

use crate::data::{InteractionTable, NegativeSampler};
use crate::error::{Error, Result};
use crate::metrics::Scorer;
use crate::models::common::{
    check_id, collect_tensors, dot, init_rng, normal, pairs_of, sample_triples, sq_penalty, train_loop, with_penalty,
    TensorBag, TrainOptions, TrainTrace,
};
use crate::models::{Recommender, Task};

#[derive(Debug, Clone)]
pub struct BprMf {
    params: ParamSet,
    p: ParamId,
    q: ParamId,
}

impl BprMf {
    pub fn new(n_users: usize, n_items: usize, k: usize, seed: u64) -> Result<Self> {
        if k == 0 || n_users == 0 || n_items == 0 {
            return Err(Error::InvalidArgument("BPRMF needs k, n_users, n_items >= 1".into()));
        }
        let mut rng = init_rng(seed);
        let mut params = ParamSet::new();
        let p = params.add("P", normal(&mut rng, &[n_users, k]));
        let q = params.add("Q", normal(&mut rng, &[n_items, k]));
        Ok(Self { params, p, q })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// `P_u·Q_i − P_u·Q_j` per triple.
    pub fn margins(&self, triples: &[(usize, usize, usize)]) -> Result<Vec<f64>> {
        let (p, q) = (self.params.get(self.p), self.params.get(self.q));
        triples
            .iter()
            .map(|&(u, i, j)| {
                check_id("user", u, self.n_users())?;
                check_id("item", i, self.n_items())?;
                check_id("item", j, self.n_items())?;
                Ok(dot(p.row(u), q.row(i)) - dot(p.row(u), q.row(j)))
            })
            .collect()
    }

    /// Mean of `−ln σ(x̂_uij) + λ(‖P_u‖² + ‖Q_i‖² + ‖Q_j‖²)` over the triples.
    pub fn loss(
        &self,
        params: &ParamSet,
        tape: &mut Tape,
        triples: &[(usize, usize, usize)],
        l2: f64,
    ) -> AdResult<NodeId> {
        let us: Vec<usize> = triples.iter().map(|t| t.0).collect();
        let is: Vec<usize> = triples.iter().map(|t| t.1).collect();
        let js: Vec<usize> = triples.iter().map(|t| t.2).collect();
        let p = tape.param(params, self.p);
        let q = tape.param(params, self.q);
        let pu = tape.lookup(p, &us)?;
        let qi = tape.lookup(q, &is)?;
        let qj = tape.lookup(q, &js)?;
        let xi = tape.dot(pu, qi)?;
        let xj = tape.dot(pu, qj)?;
        let x = tape.sub(xi, xj)?;
        let ls = tape.log_sigmoid(x)?;
        let m = tape.mean(ls)?;
        let data = tape.scale(m, -1.0)?;
        let penalty = sq_penalty(tape, &[pu, qi, qj], l2 / triples.len() as f64)?;
        with_penalty(tape, data, penalty)
    }

    /// Each epoch visits every observed pair once with `neg_samples` sampled
    /// negatives.
    pub fn fit(&mut self, train: &InteractionTable, opts: &TrainOptions) -> Result<TrainTrace> {
        let pairs = pairs_of(train);
        let sampler = NegativeSampler::new(train);
        let model = self.clone();
        let mut skipped = 0usize;
        let trace = train_loop(
            &mut self.params,
            opts,
            pairs.len(),
            |params, idx, rng| {
                let batch: Vec<(usize, usize)> = idx.iter().map(|&k| pairs[k]).collect();
                let (triples, s) = sample_triples(&sampler, &batch, opts.neg_samples.max(1), rng)?;
                skipped += s;
                if triples.is_empty() {
                    return Ok(None);
                }
                let mut tape = Tape::new();
                let loss = model.loss(params, &mut tape, &triples, opts.l2)?;
                Ok(Some((tape, loss)))
            },
            |_| {},
        )?;
        if skipped > 0 {
            log::info!("skipped {skipped} pairs of users without negatives");
        }
        Ok(trace)
    }

    pub fn restore(k: usize, mut bag: TensorBag) -> Result<Self> {
        let p_t = bag.take("P", 2)?;
        let q_t = bag.take("Q", 2)?;
        bag.finish()?;
        if p_t.shape()[1] != k || q_t.shape()[1] != k {
            return Err(Error::InvalidArgument(format!("factor width differs from k = {k}")));
        }
        let mut params = ParamSet::new();
        let p = params.add("P", p_t);
        let q = params.add("Q", q_t);
        Ok(Self { params, p, q })
    }
}

impl Scorer for BprMf {
    fn score(&self, user: usize, items: &[usize]) -> Result<Vec<f64>> {
        check_id("user", user, self.n_users())?;
        let (p, q) = (self.params.get(self.p), self.params.get(self.q));
        items
            .iter()
            .map(|&i| {
                check_id("item", i, self.n_items())?;
                Ok(dot(p.row(user), q.row(i)))
            })
            .collect()
    }
}

impl Recommender for BprMf {
    fn name(&self) -> &'static str {
        "bprmf"
    }

    fn task(&self) -> Task {
        Task::Ranking
    }

    fn n_users(&self) -> usize {
        self.params.get(self.p).shape()[0]
    }

    fn n_items(&self) -> usize {
        self.params.get(self.q).shape()[0]
    }

    fn tensors(&self) -> Vec<(String, Tensor)> {
        collect_tensors(&self.params, &[])
    }
}
