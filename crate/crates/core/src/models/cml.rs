//! Collaborative metric learning: users and items as points in the unit ball,
//! preference as small squared distance.

use drec_autodiff::{NodeId, ParamId, ParamSet, Result as AdResult, Tape, Tensor};

use crate::data::{InteractionTable, NegativeSampler};
use crate::error::{Error, Result};
use crate::metrics::Scorer;
use crate::models::common::{
    check_id, clip_rows, collect_tensors, init_rng, normal, pairs_of, sample_triples, sq_dist, sq_penalty, train_loop,
    with_penalty, TensorBag, TrainOptions, TrainTrace,
};
use crate::models::{Recommender, Task};

#[derive(Debug, Clone)]
pub struct Cml {
    params: ParamSet,
    u: ParamId,
    v: ParamId,
    margin: f64,
}

impl Cml {
    pub fn new(n_users: usize, n_items: usize, k: usize, margin: f64, seed: u64) -> Result<Self> {
        if k == 0 || n_users == 0 || n_items == 0 {
            return Err(Error::InvalidArgument("CML needs k, n_users, n_items >= 1".into()));
        }
        if !(margin >= 0.0 && margin.is_finite()) {
            return Err(Error::InvalidArgument(format!("margin must be >= 0, got {margin}")));
        }
        let mut rng = init_rng(seed);
        let mut params = ParamSet::new();
        let u = params.add("U", normal(&mut rng, &[n_users, k]));
        let v = params.add("V", normal(&mut rng, &[n_items, k]));
        Ok(Self { params, u, v, margin })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// Squared distance between user `u` and item `i`.
    pub fn distance(&self, user: usize, item: usize) -> Result<f64> {
        check_id("user", user, self.n_users())?;
        check_id("item", item, self.n_items())?;
        Ok(sq_dist(
            self.params.get(self.u).row(user),
            self.params.get(self.v).row(item),
        ))
    }

    /// `Σ_j [m + d²(U_u, V_i) − d²(U_u, V_j)]_+` summed over the triples and
    /// divided by `positives` (the number of observed pairs in the batch).
    pub fn loss(
        &self,
        params: &ParamSet,
        tape: &mut Tape,
        triples: &[(usize, usize, usize)],
        positives: usize,
        l2: f64,
    ) -> AdResult<NodeId> {
        let us: Vec<usize> = triples.iter().map(|t| t.0).collect();
        let is: Vec<usize> = triples.iter().map(|t| t.1).collect();
        let js: Vec<usize> = triples.iter().map(|t| t.2).collect();
        let u = tape.param(params, self.u);
        let v = tape.param(params, self.v);
        let uu = tape.lookup(u, &us)?;
        let vi = tape.lookup(v, &is)?;
        let vj = tape.lookup(v, &js)?;
        let dpos = tape.sq_l2_dist(uu, vi)?;
        let dneg = tape.sq_l2_dist(uu, vj)?;
        let gap = tape.sub(dpos, dneg)?;
        let m = tape.constant(Tensor::scalar(self.margin));
        let pre = tape.add(gap, m)?;
        let hinge = tape.relu(pre)?;
        let total = tape.sum(hinge)?;
        let data = tape.scale(total, 1.0 / positives.max(1) as f64)?;
        let penalty = sq_penalty(tape, &[uu, vi, vj], l2 / positives.max(1) as f64)?;
        with_penalty(tape, data, penalty)
    }

    /// Projects every row of `U` and `V` back into the unit ball.
    pub fn project(&mut self) {
        project(&mut self.params, self.u, self.v);
    }

    pub fn fit(&mut self, train: &InteractionTable, opts: &TrainOptions) -> Result<TrainTrace> {
        self.fit_observed(train, opts, |_| {})
    }

    /// Like [`fit`](Self::fit), calling `on_step` after every projected update.
    pub fn fit_observed(
        &mut self,
        train: &InteractionTable,
        opts: &TrainOptions,
        mut on_step: impl FnMut(&ParamSet),
    ) -> Result<TrainTrace> {
        let pairs = pairs_of(train);
        let sampler = NegativeSampler::new(train);
        let model = self.clone();
        let (uid, vid) = (self.u, self.v);
        self.project();
        train_loop(
            &mut self.params,
            opts,
            pairs.len(),
            |params, idx, rng| {
                let batch: Vec<(usize, usize)> = idx.iter().map(|&k| pairs[k]).collect();
                let (triples, _) = sample_triples(&sampler, &batch, opts.neg_samples.max(1), rng)?;
                if triples.is_empty() {
                    return Ok(None);
                }
                let mut tape = Tape::new();
                let loss = model.loss(params, &mut tape, &triples, batch.len(), opts.l2)?;
                Ok(Some((tape, loss)))
            },
            |params| {
                project(params, uid, vid);
                on_step(params);
            },
        )
    }

    pub fn restore(k: usize, margin: f64, mut bag: TensorBag) -> Result<Self> {
        let u_t = bag.take("U", 2)?;
        let v_t = bag.take("V", 2)?;
        bag.finish()?;
        if u_t.shape()[1] != k || v_t.shape()[1] != k {
            return Err(Error::InvalidArgument(format!("point dimension differs from k = {k}")));
        }
        let mut params = ParamSet::new();
        let u = params.add("U", u_t);
        let v = params.add("V", v_t);
        Ok(Self { params, u, v, margin })
    }
}

fn project(params: &mut ParamSet, u: ParamId, v: ParamId) {
    clip_rows(params.get_mut(u), 1.0);
    clip_rows(params.get_mut(v), 1.0);
}

impl Scorer for Cml {
    /// Negated squared distance, so nearer items rank first.
    fn score(&self, user: usize, items: &[usize]) -> Result<Vec<f64>> {
        items.iter().map(|&i| Ok(-self.distance(user, i)?)).collect()
    }
}

impl Recommender for Cml {
    fn name(&self) -> &'static str {
        "cml"
    }

    fn task(&self) -> Task {
        Task::Ranking
    }

    fn n_users(&self) -> usize {
        self.params.get(self.u).shape()[0]
    }

    fn n_items(&self) -> usize {
        self.params.get(self.v).shape()[0]
    }

    fn tensors(&self) -> Vec<(String, Tensor)> {
        collect_tensors(&self.params, &[])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use drec_autodiff::grad_check;

    fn placed(user: &[f64], pos: &[f64], neg: &[f64], margin: f64) -> Cml {
        let mut m = Cml::new(1, 2, user.len(), margin, 0).unwrap();
        let (u, v) = (m.u, m.v);
        m.params_mut().get_mut(u).row_mut(0).copy_from_slice(user);
        m.params_mut().get_mut(v).row_mut(0).copy_from_slice(pos);
        m.params_mut().get_mut(v).row_mut(1).copy_from_slice(neg);
        m
    }

    fn loss_value(m: &Cml) -> f64 {
        let mut tape = Tape::new();
        let l = m.loss(m.params(), &mut tape, &[(0, 0, 1)], 1, 0.0).unwrap();
        tape.value(l).item().unwrap()
    }

    #[test]
    fn satisfied_margin_costs_nothing() {
        // d²(u,i) = 0.2, d²(u,j) = 1.0
        let m = placed(&[0.0, 0.0], &[0.2f64.sqrt(), 0.0], &[1.0, 0.0], 0.5);
        assert_eq!(loss_value(&m), 0.0);
    }

    #[test]
    fn violated_margin_is_linear() {
        // d²(u,i) = 0.2, d²(u,j) = 0.4
        let m = placed(&[0.0, 0.0], &[0.2f64.sqrt(), 0.0], &[0.0, 0.4f64.sqrt()], 0.5);
        assert!((loss_value(&m) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_away_from_kinks() {
        let mut m = Cml::new(3, 4, 3, 0.5, 1).unwrap();
        let (u, v) = (m.u, m.v);
        let mut rng = init_rng(21);
        *m.params_mut().get_mut(u) = Tensor::new(
            vec![3, 3],
            normal(&mut rng, &[3, 3]).data().iter().map(|x| x * 30.0).collect(),
        )
        .unwrap();
        *m.params_mut().get_mut(v) = Tensor::new(
            vec![4, 3],
            normal(&mut rng, &[4, 3]).data().iter().map(|x| x * 30.0).collect(),
        )
        .unwrap();
        let triples = [(0, 1, 2), (1, 0, 3), (2, 3, 1), (0, 1, 3)];
        // every hinge stays clear of zero by more than the probe step
        for &(a, b, c) in &triples {
            let d = |x: usize| sq_dist(m.params().get(u).row(a), m.params().get(v).row(x));
            assert!((0.5 + d(b) - d(c)).abs() > 1e-3);
        }
        let report = grad_check(m.params(), 1e-4, |ps| {
            let mut tape = Tape::new();
            let l = m.loss(ps, &mut tape, &triples, 3, 0.1)?;
            Ok((tape, l))
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn projection_bounds_rows() {
        let mut m = placed(&[3.0, 4.0], &[0.1, 0.1], &[0.0, 2.0], 0.5);
        m.project();
        assert!(crate::models::max_row_norm(m.params().get(m.u)) <= 1.0 + 1e-12);
        assert!(crate::models::max_row_norm(m.params().get(m.v)) <= 1.0 + 1e-12);
    }
}
