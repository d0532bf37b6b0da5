//! Item-based AutoRec: each item's rating column over users is encoded and
//! reconstructed.

use std::sync::OnceLock;

use drec_autodiff::{NodeId, ParamId, ParamSet, Result as AdResult, Tape, Tensor};

use crate::data::InteractionTable;
use crate::error::{Error, Result};
use crate::metrics::Scorer;
use crate::models::common::{
    check_id, collect_tensors, dot, init_rng, normal, train_loop, TensorBag, TrainOptions, TrainTrace,
};
use crate::models::{Recommender, Task};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone)]
pub struct AutoRec {
    params: ParamSet,
    /// Encoder `[h, n_users]`.
    v: ParamId,
    mu_b: ParamId,
    /// Decoder `[n_users, h]`.
    w: ParamId,
    b: ParamId,
    n_items: usize,
    range: (f64, f64),
    /// Observed `(user, rating)` pairs per item.
    columns: Vec<Vec<(usize, f64)>>,
    hidden: OnceLock<Vec<Vec<f64>>>,
}

impl AutoRec {
    pub fn new(train: &InteractionTable, hidden: usize, seed: u64) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::InvalidArgument("hidden size must be >= 1".into()));
        }
        let range = train
            .rating_range()
            .ok_or_else(|| Error::Empty("training set".into()))?;
        let mut rng = init_rng(seed);
        let nu = train.n_users();
        let mut params = ParamSet::new();
        let v = params.add("V", normal(&mut rng, &[hidden, nu]));
        let mu_b = params.add("mu_b", Tensor::zeros(vec![hidden]));
        let w = params.add("W", normal(&mut rng, &[nu, hidden]));
        let b = params.add("b", Tensor::zeros(vec![nu]));
        let mut model = Self {
            params,
            v,
            mu_b,
            w,
            b,
            n_items: train.n_items(),
            range,
            columns: Vec::new(),
            hidden: OnceLock::new(),
        };
        model.set_columns(train);
        Ok(model)
    }

    fn set_columns(&mut self, train: &InteractionTable) {
        let mut columns = vec![Vec::new(); self.n_items];
        for x in train.interactions() {
            columns[x.item].push((x.user, x.rating));
        }
        for c in &mut columns {
            c.sort_by_key(|&(u, _)| u);
        }
        self.columns = columns;
        self.hidden = OnceLock::new();
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        self.hidden = OnceLock::new();
        &mut self.params
    }

    pub fn hidden_size(&self) -> usize {
        self.params.get(self.mu_b).len()
    }

    fn users(&self) -> usize {
        self.params.get(self.b).len()
    }

    fn encode(&self, column: &[(usize, f64)]) -> Vec<f64> {
        let v = self.params.get(self.v);
        let mu_b = self.params.get(self.mu_b).data();
        (0..self.hidden_size())
            .map(|j| {
                let row = v.row(j);
                sigmoid(mu_b[j] + column.iter().map(|&(u, r)| row[u] * r).sum::<f64>())
            })
            .collect()
    }

    /// `W·sigmoid(V·r + μ_b) + b` for one observed column, unclipped.
    pub fn reconstruct(&self, column: &[(usize, f64)]) -> Result<Vec<f64>> {
        if column.is_empty() {
            return Err(Error::Empty("item column has no observed ratings".into()));
        }
        for &(u, _) in column {
            check_id("user", u, self.users())?;
        }
        let h = self.encode(column);
        let w = self.params.get(self.w);
        let b = self.params.get(self.b).data();
        Ok((0..self.users()).map(|u| dot(w.row(u), &h) + b[u]).collect())
    }

    /// Clipped prediction for `(user, item)` from the training column.
    pub fn predict(&self, user: usize, item: usize) -> Result<f64> {
        check_id("user", user, self.users())?;
        check_id("item", item, self.n_items)?;
        let hidden = self
            .hidden
            .get_or_init(|| self.columns.iter().map(|c| self.encode(c)).collect());
        let raw = dot(self.params.get(self.w).row(user), &hidden[item]) + self.params.get(self.b).data()[user];
        Ok(raw.clamp(self.range.0, self.range.1))
    }

    /// Dense input and mask rows for a batch of items.
    pub fn batch_inputs(&self, items: &[usize]) -> (Tensor, Tensor) {
        let nu = self.users();
        let mut input = vec![0.0; items.len() * nu];
        let mut mask = vec![0.0; items.len() * nu];
        for (r, &i) in items.iter().enumerate() {
            for &(u, rating) in &self.columns[i] {
                input[r * nu + u] = rating;
                mask[r * nu + u] = 1.0;
            }
        }
        (
            Tensor::new(vec![items.len(), nu], input).expect("batch shape"),
            Tensor::new(vec![items.len(), nu], mask).expect("batch shape"),
        )
    }

    /// `Σ ‖(r − f(r⊙m))⊙m‖² + (λ/2)·share·(‖W‖² + ‖V‖²)`.
    ///
    /// The input is masked before encoding, so values at unobserved positions
    /// never reach the loss. `share` is the batch's fraction of all items.
    pub fn loss(
        &self,
        params: &ParamSet,
        tape: &mut Tape,
        input: Tensor,
        mask: Tensor,
        l2: f64,
        share: f64,
    ) -> AdResult<NodeId> {
        let r = tape.constant(input);
        let m = tape.constant(mask);
        let x = tape.mul(r, m)?;
        let v = tape.param(params, self.v);
        let mu_b = tape.param(params, self.mu_b);
        let w = tape.param(params, self.w);
        let b = tape.param(params, self.b);

        let vt = tape.transpose(v)?;
        let pre = tape.matmul(x, vt)?;
        let pre = tape.bias_add(pre, mu_b)?;
        let h = tape.sigmoid(pre)?;
        let wt = tape.transpose(w)?;
        let out = tape.matmul(h, wt)?;
        let out = tape.bias_add(out, b)?;
        let diff = tape.sub(out, x)?;
        let err = tape.mul(diff, m)?;
        let sq = tape.mul(err, err)?;
        let data = tape.sum(sq)?;
        if l2 == 0.0 {
            return Ok(data);
        }
        let w2 = tape.mul(w, w)?;
        let w2 = tape.sum(w2)?;
        let v2 = tape.mul(v, v)?;
        let v2 = tape.sum(v2)?;
        let norms = tape.add(w2, v2)?;
        let reg = tape.scale(norms, 0.5 * l2 * share)?;
        tape.add(data, reg)
    }

    /// Trains on the columns of `train`; items without ratings are skipped.
    pub fn fit(&mut self, train: &InteractionTable, opts: &TrainOptions) -> Result<TrainTrace> {
        self.set_columns(train);
        let items: Vec<usize> = (0..self.n_items).filter(|&i| !self.columns[i].is_empty()).collect();
        let total = items.len() as f64;
        let model = self.clone();
        let trace = train_loop(
            &mut self.params,
            opts,
            items.len(),
            |params, idx, _| {
                let batch: Vec<usize> = idx.iter().map(|&k| items[k]).collect();
                let (input, mask) = model.batch_inputs(&batch);
                let mut tape = Tape::new();
                let share = batch.len() as f64 / total;
                let loss = model.loss(params, &mut tape, input, mask, opts.l2, share)?;
                Ok(Some((tape, loss)))
            },
            |_| {},
        );
        self.hidden = OnceLock::new();
        trace
    }

    pub fn restore(hidden: usize, mut bag: TensorBag) -> Result<Self> {
        let v_t = bag.take("V", 2)?;
        let nu = v_t.shape()[1];
        if v_t.shape()[0] != hidden {
            return Err(Error::InvalidArgument(format!(
                "encoder height differs from k = {hidden}"
            )));
        }
        let mu_b_t = bag.take_shaped("mu_b", &[hidden])?;
        let w_t = bag.take_shaped("W", &[nu, hidden])?;
        let b_t = bag.take_shaped("b", &[nu])?;
        let ctx = bag.take_shaped("context", &[3])?;
        let obs = bag.take("observed", 2)?;
        bag.finish()?;
        let c = ctx.data();
        let n_items = c[2] as usize;
        if obs.shape()[1] != 3 {
            return Err(Error::InvalidArgument("observed tensor must have 3 columns".into()));
        }
        let mut columns = vec![Vec::new(); n_items];
        for r in 0..obs.shape()[0] {
            let row = obs.row(r);
            let (u, i) = (row[0] as usize, row[1] as usize);
            check_id("item", i, n_items)?;
            check_id("user", u, nu)?;
            columns[i].push((u, row[2]));
        }
        let mut params = ParamSet::new();
        let v = params.add("V", v_t);
        let mu_b = params.add("mu_b", mu_b_t);
        let w = params.add("W", w_t);
        let b = params.add("b", b_t);
        Ok(Self {
            params,
            v,
            mu_b,
            w,
            b,
            n_items,
            range: (c[0], c[1]),
            columns,
            hidden: OnceLock::new(),
        })
    }
}

impl Scorer for AutoRec {
    fn score(&self, user: usize, items: &[usize]) -> Result<Vec<f64>> {
        items.iter().map(|&i| self.predict(user, i)).collect()
    }
}

impl Recommender for AutoRec {
    fn name(&self) -> &'static str {
        "autorec"
    }

    fn task(&self) -> Task {
        Task::Rating
    }

    fn n_users(&self) -> usize {
        self.users()
    }

    fn n_items(&self) -> usize {
        self.n_items
    }

    fn tensors(&self) -> Vec<(String, Tensor)> {
        let ctx = Tensor::vector(vec![self.range.0, self.range.1, self.n_items as f64]);
        let mut obs = Vec::new();
        for (i, col) in self.columns.iter().enumerate() {
            for &(u, r) in col {
                obs.extend_from_slice(&[u as f64, i as f64, r]);
            }
        }
        let n = obs.len() / 3;
        let observed = Tensor::new(vec![n.max(1), 3], if n == 0 { vec![0.0; 3] } else { obs }).expect("observed shape");
        collect_tensors(&self.params, &[("context", &ctx), ("observed", &observed)])
    }
}
