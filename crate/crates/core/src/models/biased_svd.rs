//! Biased matrix factorization: `μ + b_u + b_i + P_u·Q_i`.

use drec_autodiff::{NodeId, ParamId, ParamSet, Result as AdResult, Tape, Tensor};

use crate::data::{Interaction, InteractionTable};
use crate::error::{Error, Result};
use crate::metrics::Scorer;
use crate::models::common::{
    check_id, collect_tensors, init_rng, lookup_column, normal, sq_penalty, train_loop, with_penalty, TensorBag,
    TrainOptions, TrainTrace,
};
use crate::models::{Recommender, Task};

#[derive(Debug, Clone)]
pub struct BiasedSvd {
    params: ParamSet,
    user_bias: ParamId,
    item_bias: ParamId,
    p: ParamId,
    q: ParamId,
    mu: f64,
    range: (f64, f64),
    k: usize,
}

impl BiasedSvd {
    /// Random factors, zero biases, `μ` and the clipping range from `train`.
    pub fn new(train: &InteractionTable, k: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        let mu = train.mean_rating().ok_or_else(|| Error::Empty("training set".into()))?;
        let range = train.rating_range().expect("non-empty");
        let mut rng = init_rng(seed);
        let (nu, ni) = (train.n_users(), train.n_items());
        let mut params = ParamSet::new();
        let user_bias = params.add("user_bias", Tensor::zeros(vec![nu, 1]));
        let item_bias = params.add("item_bias", Tensor::zeros(vec![ni, 1]));
        let p = params.add("P", normal(&mut rng, &[nu, k]));
        let q = params.add("Q", normal(&mut rng, &[ni, k]));
        Ok(Self {
            params,
            user_bias,
            item_bias,
            p,
            q,
            mu,
            range,
            k,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn set_mu(&mut self, mu: f64) {
        self.mu = mu;
    }

    pub fn rating_range(&self) -> (f64, f64) {
        self.range
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Unclipped score.
    pub fn raw_score(&self, user: usize, item: usize) -> Result<f64> {
        check_id("user", user, self.n_users())?;
        check_id("item", item, self.n_items())?;
        let ps = &self.params;
        let bu = ps.get(self.user_bias).data()[user];
        let bi = ps.get(self.item_bias).data()[item];
        let pu = ps.get(self.p).row(user);
        let qi = ps.get(self.q).row(item);
        Ok(self.mu + bu + bi + pu.iter().zip(qi).map(|(a, b)| a * b).sum::<f64>())
    }

    /// Score clipped to the training rating range.
    pub fn predict(&self, user: usize, item: usize) -> Result<f64> {
        Ok(self.raw_score(user, item)?.clamp(self.range.0, self.range.1))
    }

    /// Mean squared error of unclipped scores plus
    /// `l2 · mean(b_u² + b_i² + ‖P_u‖² + ‖Q_i‖²)` over the batch.
    pub fn loss(&self, params: &ParamSet, tape: &mut Tape, batch: &[Interaction], l2: f64) -> AdResult<NodeId> {
        let users: Vec<usize> = batch.iter().map(|x| x.user).collect();
        let items: Vec<usize> = batch.iter().map(|x| x.item).collect();
        let ratings: Vec<f64> = batch.iter().map(|x| x.rating).collect();
        let n = batch.len();

        let bu_t = tape.param(params, self.user_bias);
        let bi_t = tape.param(params, self.item_bias);
        let p_t = tape.param(params, self.p);
        let q_t = tape.param(params, self.q);
        let bu = lookup_column(tape, bu_t, &users)?;
        let bi = lookup_column(tape, bi_t, &items)?;
        let pu = tape.lookup(p_t, &users)?;
        let qi = tape.lookup(q_t, &items)?;

        let inner = tape.dot(pu, qi)?;
        let inner = tape.reshape(inner, &[n])?;
        let biases = tape.add(bu, bi)?;
        let s = tape.add(inner, biases)?;
        let mu = tape.constant(Tensor::scalar(self.mu));
        let pred = tape.add(s, mu)?;
        let r = tape.constant(Tensor::vector(ratings));
        let err = tape.sub(pred, r)?;
        let sq = tape.mul(err, err)?;
        let data = tape.mean(sq)?;
        let penalty = sq_penalty(tape, &[bu, bi, pu, qi], l2 / n as f64)?;
        with_penalty(tape, data, penalty)
    }

    pub fn fit(&mut self, train: &InteractionTable, opts: &TrainOptions) -> Result<TrainTrace> {
        let rows = train.interactions();
        let model = self.clone();
        train_loop(
            &mut self.params,
            opts,
            rows.len(),
            |params, idx, _| {
                let batch: Vec<Interaction> = idx.iter().map(|&k| rows[k]).collect();
                let mut tape = Tape::new();
                let loss = model.loss(params, &mut tape, &batch, opts.l2)?;
                Ok(Some((tape, loss)))
            },
            |_| {},
        )
    }

    pub fn restore(k: usize, mut bag: TensorBag) -> Result<Self> {
        let p_t = bag.take("P", 2)?;
        let (nu, kk) = p_t.dims2().expect("rank 2");
        let q_t = bag.take("Q", 2)?;
        let ni = q_t.shape()[0];
        if kk != k || q_t.shape()[1] != k {
            return Err(Error::InvalidArgument(format!("factor width differs from k = {k}")));
        }
        let ub = bag.take_shaped("user_bias", &[nu, 1])?;
        let ib = bag.take_shaped("item_bias", &[ni, 1])?;
        let ctx = bag.take_shaped("context", &[3])?;
        bag.finish()?;
        let mut params = ParamSet::new();
        let user_bias = params.add("user_bias", ub);
        let item_bias = params.add("item_bias", ib);
        let p = params.add("P", p_t);
        let q = params.add("Q", q_t);
        let c = ctx.data();
        Ok(Self {
            params,
            user_bias,
            item_bias,
            p,
            q,
            mu: c[0],
            range: (c[1], c[2]),
            k,
        })
    }
}

impl Scorer for BiasedSvd {
    fn score(&self, user: usize, items: &[usize]) -> Result<Vec<f64>> {
        items.iter().map(|&i| self.predict(user, i)).collect()
    }
}

impl Recommender for BiasedSvd {
    fn name(&self) -> &'static str {
        "biasedsvd"
    }

    fn task(&self) -> Task {
        Task::Rating
    }

    fn n_users(&self) -> usize {
        self.params.get(self.p).shape()[0]
    }

    fn n_items(&self) -> usize {
        self.params.get(self.q).shape()[0]
    }

    fn tensors(&self) -> Vec<(String, Tensor)> {
        let ctx = Tensor::vector(vec![self.mu, self.range.0, self.range.1]);
        collect_tensors(&self.params, &[("context", &ctx)])
    }
}
