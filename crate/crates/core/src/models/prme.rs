//! Personalized ranking metric embedding: a first-order Markov model that
//! blends a user-item distance with a previous-item to next-item distance.

use drec_autodiff::{NodeId, ParamId, ParamSet, Result as AdResult, Tape, Tensor};

use crate::data::{build_sequences, InteractionTable, NegativeSampler};
use crate::error::{Error, Result};
use crate::metrics::Scorer;
use crate::models::common::{
    check_id, collect_tensors, ids_from, ids_tensor, init_rng, normal, sq_dist, sq_penalty, train_loop, with_penalty,
    TensorBag, TrainOptions, TrainTrace,
};
use crate::models::{Recommender, Task};

/// One training comparison: after `prev`, user `user` moved to `pos` rather
/// than `neg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub user: usize,
    pub prev: usize,
    pub pos: usize,
    pub neg: usize,
}

#[derive(Debug, Clone)]
pub struct Prme {
    params: ParamSet,
    /// Preference-space item points.
    pp: ParamId,
    /// Sequential-space item points.
    ps: ParamId,
    pu: ParamId,
    alpha: f64,
    /// Most recent training item per user, `n_items` when there is none.
    last: Vec<usize>,
}

impl Prme {
    pub fn new(n_users: usize, n_items: usize, k: usize, alpha: f64, seed: u64) -> Result<Self> {
        if k == 0 || n_users == 0 || n_items == 0 {
            return Err(Error::InvalidArgument("PRME needs k, n_users, n_items >= 1".into()));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        let mut rng = init_rng(seed);
        let mut params = ParamSet::new();
        let pp = params.add("P_P", normal(&mut rng, &[n_items, k]));
        let ps = params.add("P_S", normal(&mut rng, &[n_items, k]));
        let pu = params.add("P_U", normal(&mut rng, &[n_users, k]));
        Ok(Self {
            params,
            pp,
            ps,
            pu,
            alpha,
            last: vec![n_items; n_users],
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// The item each user's next prediction is conditioned on.
    pub fn last_items(&self) -> &[usize] {
        &self.last
    }

    pub fn set_last_items(&mut self, last: Vec<usize>) -> Result<()> {
        if last.len() != self.n_users() {
            return Err(Error::InvalidArgument("one previous item per user required".into()));
        }
        for &i in &last {
            check_id("item", i, self.n_items() + 1)?;
        }
        self.last = last;
        Ok(())
    }

    /// `α‖P^U_u − P^P_i‖² + (1−α)‖P^S_prev − P^S_i‖²`; a `prev` of `n_items`
    /// stands for "no history" and uses the origin.
    pub fn distance(&self, user: usize, prev: usize, item: usize) -> Result<f64> {
        check_id("user", user, self.n_users())?;
        check_id("item", prev, self.n_items() + 1)?;
        check_id("item", item, self.n_items())?;
        let ps = self.params.get(self.ps);
        let k = ps.shape()[1];
        let origin = vec![0.0; k];
        let from = if prev == self.n_items() {
            &origin[..]
        } else {
            ps.row(prev)
        };
        let pref = sq_dist(self.params.get(self.pu).row(user), self.params.get(self.pp).row(item));
        let seq = sq_dist(from, ps.row(item));
        Ok(self.alpha * pref + (1.0 - self.alpha) * seq)
    }

    /// Blended distances `[n]` for a batch, plus looked-up rows.
    fn distances(
        &self,
        params: &ParamSet,
        tape: &mut Tape,
        users: &[usize],
        prevs: &[usize],
        items: &[usize],
    ) -> AdResult<(NodeId, Vec<NodeId>)> {
        let mut rows = Vec::new();
        let mut total: Option<NodeId> = None;
        if self.alpha > 0.0 {
            let pu = tape.param(params, self.pu);
            let pp = tape.param(params, self.pp);
            let u = tape.lookup(pu, users)?;
            let i = tape.lookup(pp, items)?;
            rows.extend([u, i]);
            let d = tape.sq_l2_dist(u, i)?;
            total = Some(tape.scale(d, self.alpha)?);
        }
        if self.alpha < 1.0 {
            let ps = tape.param(params, self.ps);
            let from = if prevs.contains(&self.n_items()) {
                let k = params.get(self.ps).shape()[1];
                let origin = tape.constant(Tensor::zeros(vec![1, k]));
                tape.concat(&[ps, origin], 0)?
            } else {
                ps
            };
            let p = tape.lookup(from, prevs)?;
            let i = tape.lookup(ps, items)?;
            rows.extend([p, i]);
            let d = tape.sq_l2_dist(p, i)?;
            let d = tape.scale(d, 1.0 - self.alpha)?;
            total = Some(match total {
                Some(t) => tape.add(t, d)?,
                None => d,
            });
        }
        Ok((total.expect("alpha selects at least one branch"), rows))
    }

    /// Mean `−ln σ(d(u,prev,neg) − d(u,prev,pos))` plus `l2 / n` times the
    /// squared rows touched.
    pub fn loss(&self, params: &ParamSet, tape: &mut Tape, batch: &[Transition], l2: f64) -> AdResult<NodeId> {
        let users: Vec<usize> = batch.iter().map(|t| t.user).collect();
        let prevs: Vec<usize> = batch.iter().map(|t| t.prev).collect();
        let pos: Vec<usize> = batch.iter().map(|t| t.pos).collect();
        let neg: Vec<usize> = batch.iter().map(|t| t.neg).collect();
        let (dp, mut rows) = self.distances(params, tape, &users, &prevs, &pos)?;
        let (dn, more) = self.distances(params, tape, &users, &prevs, &neg)?;
        rows.extend(more);
        let x = tape.sub(dn, dp)?;
        let ls = tape.log_sigmoid(x)?;
        let m = tape.mean(ls)?;
        let data = tape.scale(m, -1.0)?;
        let penalty = sq_penalty(tape, &rows, l2 / batch.len() as f64)?;
        with_penalty(tape, data, penalty)
    }

    /// Trains on every consecutive pair of each user's chronological history.
    pub fn fit(&mut self, train: &InteractionTable, opts: &TrainOptions) -> Result<TrainTrace> {
        let data = build_sequences(train, 1, 1)?;
        let sampler = NegativeSampler::new(train);
        self.last = data.last_windows().into_iter().map(|w| w[0]).collect();
        let model = self.clone();
        train_loop(
            &mut self.params,
            opts,
            data.instances.len(),
            |params, idx, rng| {
                let mut batch = Vec::with_capacity(idx.len() * opts.neg_samples.max(1));
                for &k in idx {
                    let inst = &data.instances[k];
                    if !sampler.has_negatives(inst.user, &[]) {
                        continue;
                    }
                    for neg in sampler.sample(inst.user, opts.neg_samples.max(1), &[], rng)? {
                        batch.push(Transition {
                            user: inst.user,
                            prev: inst.history[0],
                            pos: inst.targets[0],
                            neg,
                        });
                    }
                }
                if batch.is_empty() {
                    return Ok(None);
                }
                let mut tape = Tape::new();
                let loss = model.loss(params, &mut tape, &batch, opts.l2)?;
                Ok(Some((tape, loss)))
            },
            |_| {},
        )
    }

    pub fn restore(k: usize, alpha: f64, mut bag: TensorBag) -> Result<Self> {
        let pp = bag.take("P_P", 2)?;
        let (ni, width) = (pp.shape()[0], pp.shape()[1]);
        if width != k {
            return Err(Error::InvalidArgument(format!("embedding width differs from k = {k}")));
        }
        let ps = bag.take_shaped("P_S", &[ni, k])?;
        let pu = bag.take("P_U", 2)?;
        if pu.shape()[1] != k {
            return Err(Error::InvalidArgument(format!("embedding width differs from k = {k}")));
        }
        let nu = pu.shape()[0];
        let last = ids_from(&bag.take_shaped("last", &[nu])?);
        bag.finish()?;
        let mut params = ParamSet::new();
        let pp = params.add("P_P", pp);
        let ps = params.add("P_S", ps);
        let pu = params.add("P_U", pu);
        let mut m = Self {
            params,
            pp,
            ps,
            pu,
            alpha,
            last: Vec::new(),
        };
        m.set_last_items(last)?;
        Ok(m)
    }
}

impl Scorer for Prme {
    /// Negated distance from the user's last training item.
    fn score(&self, user: usize, items: &[usize]) -> Result<Vec<f64>> {
        check_id("user", user, self.n_users())?;
        let prev = self.last[user];
        items.iter().map(|&i| Ok(-self.distance(user, prev, i)?)).collect()
    }
}

impl Recommender for Prme {
    fn name(&self) -> &'static str {
        "prme"
    }

    fn task(&self) -> Task {
        Task::Ranking
    }

    fn n_users(&self) -> usize {
        self.params.get(self.pu).shape()[0]
    }

    fn n_items(&self) -> usize {
        self.params.get(self.pp).shape()[0]
    }

    fn tensors(&self) -> Vec<(String, Tensor)> {
        let last = ids_tensor(vec![self.last.len()], &self.last);
        collect_tensors(&self.params, &[("last", &last)])
    }
}
