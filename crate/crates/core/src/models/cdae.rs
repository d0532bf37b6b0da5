//! Collaborative denoising autoencoder: a one-hidden-layer autoencoder over a
//! user's implicit feedback vector with an extra per-user input node.

use drec_autodiff::{NodeId, ParamId, ParamSet, Result as AdResult, Tape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{InteractionTable, NegativeSampler};
use crate::error::{Error, Result};
use crate::metrics::Scorer;
use crate::models::common::{
    check_id, collect_tensors, ids_from, ids_tensor, init_rng, lookup_column, normal, signed_logistic, sq_penalty,
    train_loop, with_penalty, TensorBag, TrainOptions, TrainTrace,
};
use crate::models::{Recommender, Task};

/// One user's training example: the (possibly corrupted) nonzero inputs and
/// the labelled output items.
#[derive(Debug, Clone, PartialEq)]
pub struct CdaeExample {
    pub user: usize,
    pub input: Vec<(usize, f64)>,
    pub targets: Vec<(usize, bool)>,
}

#[derive(Debug, Clone)]
pub struct Cdae {
    params: ParamSet,
    /// Encoder `[n_items, h]`.
    w: ParamId,
    /// User nodes `[n_users, h]`.
    v: ParamId,
    b: ParamId,
    /// Decoder stored item-major, `[n_items, h]`.
    w_out: ParamId,
    b_out: ParamId,
    q: f64,
    observed: Vec<Vec<usize>>,
}

impl Cdae {
    pub fn new(train: &InteractionTable, hidden: usize, q: f64, seed: u64) -> Result<Self> {
        if hidden == 0 || train.n_users() == 0 || train.n_items() == 0 {
            return Err(Error::InvalidArgument(
                "CDAE needs hidden, n_users, n_items >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&q) {
            return Err(Error::InvalidArgument(format!(
                "corruption q must lie in [0, 1), got {q}"
            )));
        }
        let (nu, ni) = (train.n_users(), train.n_items());
        let mut rng = init_rng(seed);
        let mut params = ParamSet::new();
        let w = params.add("W", normal(&mut rng, &[ni, hidden]));
        let v = params.add("V", normal(&mut rng, &[nu, hidden]));
        let b = params.add("b", Tensor::zeros(vec![hidden]));
        let w_out = params.add("W_prime", normal(&mut rng, &[ni, hidden]));
        let b_out = params.add("b_prime", Tensor::zeros(vec![ni, 1]));
        Ok(Self {
            params,
            w,
            v,
            b,
            w_out,
            b_out,
            q,
            observed: train.user_items(),
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn corruption(&self) -> f64 {
        self.q
    }

    /// Drops each entry with probability `q`, scaling survivors by
    /// `1 / (1 − q)`.
    pub fn corrupt(&self, items: &[usize], rng: &mut impl Rng) -> Vec<(usize, f64)> {
        if self.q == 0.0 {
            return items.iter().map(|&i| (i, 1.0)).collect();
        }
        let keep = 1.0 - self.q;
        items
            .iter()
            .map(|&i| (i, if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }))
            .collect()
    }

    /// Hidden code `[h]` for one user and input, plus the looked-up rows.
    fn encode(
        &self,
        params: &ParamSet,
        tape: &mut Tape,
        user: usize,
        input: &[(usize, f64)],
    ) -> AdResult<(NodeId, Vec<NodeId>)> {
        let v = tape.param(params, self.v);
        let vu = tape.lookup(v, &[user])?;
        let h = params.get(self.b).len();
        let vu = tape.reshape(vu, &[h])?;
        let b = tape.param(params, self.b);
        let mut pre = tape.add(vu, b)?;
        let mut rows = vec![vu];
        if !input.is_empty() {
            let items: Vec<usize> = input.iter().map(|x| x.0).collect();
            let weights = Tensor::new(vec![1, input.len()], input.iter().map(|x| x.1).collect())?;
            let w = tape.param(params, self.w);
            let wi = tape.lookup(w, &items)?;
            let y = tape.constant(weights);
            let enc = tape.matmul(y, wi)?;
            let enc = tape.reshape(enc, &[h])?;
            pre = tape.add(pre, enc)?;
            rows.push(wi);
        }
        Ok((tape.sigmoid(pre)?, rows))
    }

    /// Logits `[len]` for `items` given a hidden code.
    fn decode(&self, params: &ParamSet, tape: &mut Tape, z: NodeId, items: &[usize]) -> AdResult<(NodeId, NodeId)> {
        let h = params.get(self.b).len();
        let w = tape.param(params, self.w_out);
        let rows = tape.lookup(w, items)?;
        let zc = tape.reshape(z, &[h, 1])?;
        let logits = tape.matmul(rows, zc)?;
        let logits = tape.reshape(logits, &[items.len()])?;
        let b = tape.param(params, self.b_out);
        let bias = lookup_column(tape, b, items)?;
        Ok((tape.add(logits, bias)?, rows))
    }

    /// Scores for every item given a dense preference vector `y`.
    pub fn forward(&self, user: usize, y: &[f64]) -> Result<Vec<f64>> {
        check_id("user", user, self.n_users())?;
        if y.len() != self.n_items() {
            return Err(Error::InvalidArgument(format!(
                "preference vector has length {}, expected {}",
                y.len(),
                self.n_items()
            )));
        }
        let input: Vec<(usize, f64)> = y.iter().copied().enumerate().filter(|x| x.1 != 0.0).collect();
        let all: Vec<usize> = (0..self.n_items()).collect();
        self.scores_for(user, &input, &all)
    }

    fn scores_for(&self, user: usize, input: &[(usize, f64)], items: &[usize]) -> Result<Vec<f64>> {
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let (z, _) = self.encode(&self.params, &mut tape, user, input)?;
        let (logits, _) = self.decode(&self.params, &mut tape, z, items)?;
        let s = tape.sigmoid(logits)?;
        Ok(tape.value(s).data().to_vec())
    }

    /// Mean logistic loss over every labelled target in the batch plus
    /// `l2 / |batch|` times the squared rows touched.
    pub fn loss(&self, params: &ParamSet, tape: &mut Tape, batch: &[CdaeExample], l2: f64) -> AdResult<NodeId> {
        let mut logits = Vec::with_capacity(batch.len());
        let mut signs = Vec::new();
        let mut rows = Vec::new();
        for ex in batch {
            let (z, r) = self.encode(params, tape, ex.user, &ex.input)?;
            rows.extend(r);
            let items: Vec<usize> = ex.targets.iter().map(|t| t.0).collect();
            let (l, r) = self.decode(params, tape, z, &items)?;
            rows.push(r);
            logits.push(l);
            signs.extend(ex.targets.iter().map(|t| if t.1 { 1.0 } else { -1.0 }));
        }
        let all = if logits.len() == 1 {
            logits[0]
        } else {
            tape.concat(&logits, 0)?
        };
        let data = signed_logistic(tape, all, signs)?;
        let penalty = sq_penalty(tape, &rows, l2 / batch.len() as f64)?;
        with_penalty(tape, data, penalty)
    }

    /// One example per user with at least one observed item; fresh
    /// corruption and negatives every epoch.
    pub fn fit(&mut self, train: &InteractionTable, opts: &TrainOptions) -> Result<TrainTrace> {
        let users: Vec<usize> = (0..train.n_users()).filter(|&u| !self.observed[u].is_empty()).collect();
        let sampler = NegativeSampler::new(train);
        let model = self.clone();
        train_loop(
            &mut self.params,
            opts,
            users.len(),
            |params, idx, rng| {
                let batch = idx
                    .iter()
                    .map(|&k| model.example(&sampler, users[k], opts.neg_samples, rng))
                    .collect::<Result<Vec<_>>>()?;
                let mut tape = Tape::new();
                let loss = model.loss(params, &mut tape, &batch, opts.l2)?;
                Ok(Some((tape, loss)))
            },
            |_| {},
        )
    }

    fn example(&self, sampler: &NegativeSampler, user: usize, neg: usize, rng: &mut ChaCha8Rng) -> Result<CdaeExample> {
        let items = &self.observed[user];
        let input = self.corrupt(items, rng);
        let mut targets: Vec<(usize, bool)> = items.iter().map(|&i| (i, true)).collect();
        let want = (neg * items.len()).min(self.n_items() - items.len());
        if want > 0 {
            targets.extend(sampler.sample(user, want, &[], rng)?.into_iter().map(|j| (j, false)));
        }
        Ok(CdaeExample { user, input, targets })
    }

    pub fn restore(hidden: usize, q: f64, mut bag: TensorBag) -> Result<Self> {
        let w_t = bag.take("W", 2)?;
        let ni = w_t.shape()[0];
        if w_t.shape()[1] != hidden {
            return Err(Error::InvalidArgument(format!(
                "encoder width differs from hidden = {hidden}"
            )));
        }
        let v_t = bag.take("V", 2)?;
        let nu = v_t.shape()[0];
        if v_t.shape()[1] != hidden {
            return Err(Error::InvalidArgument(format!(
                "user node width differs from hidden = {hidden}"
            )));
        }
        let mut params = ParamSet::new();
        let w = params.add("W", w_t);
        let v = params.add("V", v_t);
        let b = params.add("b", bag.take_shaped("b", &[hidden])?);
        let w_out = params.add("W_prime", bag.take_shaped("W_prime", &[ni, hidden])?);
        let b_out = params.add("b_prime", bag.take_shaped("b_prime", &[ni, 1])?);
        let obs = bag.take("observed", 2)?;
        bag.finish()?;
        let mut observed = vec![Vec::new(); nu];
        for pair in ids_from(&obs).chunks(2) {
            check_id("user", pair[0], nu)?;
            check_id("item", pair[1], ni)?;
            observed[pair[0]].push(pair[1]);
        }
        Ok(Self {
            params,
            w,
            v,
            b,
            w_out,
            b_out,
            q,
            observed,
        })
    }

    fn observed_tensor(&self) -> Tensor {
        let ids: Vec<usize> = self
            .observed
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().flat_map(move |&i| [u, i]))
            .collect();
        ids_tensor(vec![ids.len() / 2, 2], &ids)
    }
}

impl Scorer for Cdae {
    /// Scores from the user's uncorrupted training vector.
    fn score(&self, user: usize, items: &[usize]) -> Result<Vec<f64>> {
        check_id("user", user, self.n_users())?;
        for &i in items {
            check_id("item", i, self.n_items())?;
        }
        let input: Vec<(usize, f64)> = self.observed[user].iter().map(|&i| (i, 1.0)).collect();
        self.scores_for(user, &input, items)
    }
}

impl Recommender for Cdae {
    fn name(&self) -> &'static str {
        "cdae"
    }

    fn task(&self) -> Task {
        Task::Ranking
    }

    fn n_users(&self) -> usize {
        self.params.get(self.v).shape()[0]
    }

    fn n_items(&self) -> usize {
        self.params.get(self.w).shape()[0]
    }

    fn tensors(&self) -> Vec<(String, Tensor)> {
        let obs = self.observed_tensor();
        collect_tensors(&self.params, &[("observed", &obs)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Interaction;
    use drec_autodiff::grad_check;

    fn table(pairs: &[(usize, usize)], nu: usize, ni: usize) -> InteractionTable {
        let rows = pairs
            .iter()
            .map(|&(user, item)| Interaction {
                user,
                item,
                rating: 1.0,
                timestamp: 0,
            })
            .collect();
        InteractionTable::from_dense(rows, nu, ni)
    }

    #[test]
    fn zero_parameters_score_one_half() {
        let mut m = Cdae::new(&table(&[(0, 1), (1, 2)], 2, 3), 4, 0.0, 0).unwrap();
        for id in m.params().ids().collect::<Vec<_>>() {
            let shape = m.params().get(id).shape().to_vec();
            *m.params_mut().get_mut(id) = Tensor::zeros(shape);
        }
        assert_eq!(m.forward(1, &[1.0, 0.0, 1.0]).unwrap(), vec![0.5; 3]);
    }

    #[test]
    fn zero_corruption_keeps_input() {
        let m = Cdae::new(&table(&[(0, 1)], 1, 3), 2, 0.0, 0).unwrap();
        let mut rng = init_rng(3);
        assert_eq!(m.corrupt(&[0, 2], &mut rng), vec![(0, 1.0), (2, 1.0)]);
    }

    #[test]
    fn corruption_scales_survivors() {
        let m = Cdae::new(&table(&[(0, 1)], 1, 3), 2, 0.5, 0).unwrap();
        let mut rng = init_rng(4);
        let out = m.corrupt(&(0..1000).collect::<Vec<_>>(), &mut rng);
        assert!(out.iter().all(|x| x.1 == 0.0 || x.1 == 2.0));
        let kept = out.iter().filter(|x| x.1 > 0.0).count();
        assert!((400..600).contains(&kept));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let m = Cdae::new(&table(&[(0, 1)], 1, 3), 2, 0.0, 0).unwrap();
        assert!(m.forward(0, &[1.0]).is_err());
    }

    #[test]
    fn forward_matches_hand_computation() {
        let m = Cdae::new(&table(&[(0, 1)], 2, 3), 2, 0.0, 8).unwrap();
        let ps = m.params();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let y = [0.0, 2.0, 1.0];
        let (w, v, b, wo, bo) = (ps.get(m.w), ps.get(m.v), ps.get(m.b), ps.get(m.w_out), ps.get(m.b_out));
        let z: Vec<f64> = (0..2)
            .map(|c| sig((0..3).map(|i| y[i] * w.get2(i, c)).sum::<f64>() + v.get2(1, c) + b.data()[c]))
            .collect();
        let want: Vec<f64> = (0..3)
            .map(|i| sig(wo.get2(i, 0) * z[0] + wo.get2(i, 1) * z[1] + bo.data()[i]))
            .collect();
        let got = m.forward(1, &y).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut m = Cdae::new(&table(&[(0, 1), (1, 0), (1, 2)], 2, 4), 3, 0.0, 5).unwrap();
        let mut rng = init_rng(6);
        for id in m.params().ids().collect::<Vec<_>>() {
            let shape = m.params().get(id).shape().to_vec();
            let t = normal(&mut rng, &shape);
            *m.params_mut().get_mut(id) = Tensor::new(shape, t.data().iter().map(|x| x * 50.0).collect()).unwrap();
        }
        let batch = vec![
            CdaeExample {
                user: 0,
                input: vec![(1, 2.0)],
                targets: vec![(1, true), (3, false)],
            },
            CdaeExample {
                user: 1,
                input: vec![(0, 0.0), (2, 2.0)],
                targets: vec![(0, true), (2, true), (1, false)],
            },
        ];
        let report = grad_check(m.params(), 1e-4, |ps| {
            let mut tape = Tape::new();
            let l = m.loss(ps, &mut tape, &batch, 0.1)?;
            Ok((tape, l))
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
