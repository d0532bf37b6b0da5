//! Convolutional sequence embedding: horizontal and vertical filters over the
//! embedding matrix of the last `L` items, combined with a user embedding.

use drec_autodiff::{NodeId, ParamId, ParamSet, Result as AdResult, Tape, Tensor};

use crate::data::{build_sequences, InteractionTable, NegativeSampler};
use crate::error::{Error, Result};
use crate::metrics::Scorer;
use crate::models::common::{
    check_id, collect_tensors, ids_from, ids_tensor, init_rng, lookup_column, normal, signed_logistic, sq_penalty,
    train_loop, with_penalty, zero_row, TensorBag, TrainOptions, TrainTrace,
};
use crate::models::{Recommender, Task};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaserConfig {
    /// Embedding width `d`.
    pub d: usize,
    /// Window length `L`.
    pub window: usize,
    /// Target horizon `T`.
    pub horizon: usize,
    /// Horizontal filters per height.
    pub n_h: usize,
    /// Vertical filters.
    pub n_v: usize,
}

impl CaserConfig {
    pub fn new(d: usize) -> Self {
        Self {
            d,
            window: 5,
            horizon: 1,
            n_h: 4,
            n_v: 2,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 || self.window == 0 || self.horizon == 0 || self.n_h + self.n_v == 0 {
            return Err(Error::InvalidArgument(format!("invalid Caser configuration {self:?}")));
        }
        Ok(())
    }

    /// Width of the concatenated convolution features.
    pub fn feature_width(&self) -> usize {
        self.window * self.n_h + self.n_v * self.d
    }
}

/// One training instance with labelled candidate items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaserExample {
    pub user: usize,
    pub window: Vec<usize>,
    pub targets: Vec<(usize, bool)>,
}

#[derive(Debug, Clone)]
pub struct Caser {
    params: ParamSet,
    config: CaserConfig,
    e: ParamId,
    /// Per height `1..=L`: filters `[n_h, h, d]` and biases `[n_h]`.
    horizontal: Vec<(ParamId, ParamId)>,
    vertical: Option<ParamId>,
    w_fc: ParamId,
    b_fc: ParamId,
    p: ParamId,
    w_out: ParamId,
    b_out: ParamId,
    n_items: usize,
    /// Each user's last training window.
    windows: Vec<Vec<usize>>,
}

impl Caser {
    pub fn new(n_users: usize, n_items: usize, config: CaserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_users == 0 || n_items == 0 {
            return Err(Error::InvalidArgument("Caser needs n_users, n_items >= 1".into()));
        }
        let CaserConfig {
            d, window: l, n_h, n_v, ..
        } = config;
        let mut rng = init_rng(seed);
        let mut params = ParamSet::new();
        let mut e_t = normal(&mut rng, &[n_items + 1, d]);
        zero_row(&mut e_t, n_items);
        let e = params.add("E", e_t);
        let mut horizontal = Vec::new();
        if n_h > 0 {
            for h in 1..=l {
                horizontal.push((
                    params.add(format!("conv_h{h}"), normal(&mut rng, &[n_h, h, d])),
                    params.add(format!("conv_h{h}_b"), Tensor::zeros(vec![n_h])),
                ));
            }
        }
        let vertical = (n_v > 0).then(|| params.add("conv_v", normal(&mut rng, &[n_v, l])));
        let w_fc = params.add("W_fc", normal(&mut rng, &[config.feature_width(), d]));
        let b_fc = params.add("b_fc", Tensor::zeros(vec![d]));
        let p = params.add("P", normal(&mut rng, &[n_users, d]));
        let w_out = params.add("W_out", normal(&mut rng, &[n_items, 2 * d]));
        let b_out = params.add("b_out", Tensor::zeros(vec![n_items, 1]));
        Ok(Self {
            params,
            config,
            e,
            horizontal,
            vertical,
            w_fc,
            b_fc,
            p,
            w_out,
            b_out,
            n_items,
            windows: vec![vec![n_items; l]; n_users],
        })
    }

    pub fn config(&self) -> CaserConfig {
        self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn embeddings(&self) -> ParamId {
        self.e
    }

    /// The padding id, which is also the index of the frozen zero row of `E`.
    pub fn pad(&self) -> usize {
        self.n_items
    }

    pub fn windows(&self) -> &[Vec<usize>] {
        &self.windows
    }

    pub fn set_windows(&mut self, windows: Vec<Vec<usize>>) -> Result<()> {
        if windows.len() != self.n_users() {
            return Err(Error::InvalidArgument("one window per user required".into()));
        }
        for w in &windows {
            self.check_window(w)?;
        }
        self.windows = windows;
        Ok(())
    }

    fn check_window(&self, window: &[usize]) -> Result<()> {
        if window.len() != self.config.window {
            return Err(Error::InvalidArgument(format!(
                "window has length {}, expected {}",
                window.len(),
                self.config.window
            )));
        }
        for &i in window {
            check_id("item", i, self.n_items + 1)?;
        }
        Ok(())
    }

    /// The `[2d]` vector `concat(z, P_u)` and the embedding rows touched.
    fn encode(
        &self,
        params: &ParamSet,
        tape: &mut Tape,
        user: usize,
        window: &[usize],
    ) -> AdResult<(NodeId, Vec<NodeId>)> {
        let d = self.config.d;
        let e = tape.param(params, self.e);
        let ew = tape.lookup(e, window)?;
        let mut features = Vec::new();
        for &(f, b) in &self.horizontal {
            let f = tape.param(params, f);
            let b = tape.param(params, b);
            let c = tape.conv_h(ew, f)?;
            let c = tape.bias_add(c, b)?;
            let c = tape.relu(c)?;
            features.push(tape.max_over_time(c)?);
        }
        if let Some(v) = self.vertical {
            let v = tape.param(params, v);
            let out = tape.matmul(v, ew)?;
            features.push(tape.reshape(out, &[self.config.n_v * d])?);
        }
        let feat = if features.len() == 1 {
            features[0]
        } else {
            tape.concat(&features, 0)?
        };
        let feat = tape.reshape(feat, &[1, self.config.feature_width()])?;
        let w = tape.param(params, self.w_fc);
        let b = tape.param(params, self.b_fc);
        let z = tape.matmul(feat, w)?;
        let z = tape.bias_add(z, b)?;
        let z = tape.relu(z)?;
        let p = tape.param(params, self.p);
        let pu = tape.lookup(p, &[user])?;
        let x = tape.concat(&[z, pu], 1)?;
        Ok((tape.reshape(x, &[2 * d, 1])?, vec![ew, pu]))
    }

    /// Logits `[len]` of `items` for an encoded `[2d, 1]` vector.
    fn decode(&self, params: &ParamSet, tape: &mut Tape, x: NodeId, items: &[usize]) -> AdResult<(NodeId, NodeId)> {
        let w = tape.param(params, self.w_out);
        let rows = tape.lookup(w, items)?;
        let logits = tape.matmul(rows, x)?;
        let logits = tape.reshape(logits, &[items.len()])?;
        let b = tape.param(params, self.b_out);
        let bias = lookup_column(tape, b, items)?;
        Ok((tape.add(logits, bias)?, rows))
    }

    /// Scores of every item after `window`.
    pub fn forward(&self, user: usize, window: &[usize]) -> Result<Vec<f64>> {
        let all: Vec<usize> = (0..self.n_items).collect();
        self.scores_for(user, window, &all)
    }

    fn scores_for(&self, user: usize, window: &[usize], items: &[usize]) -> Result<Vec<f64>> {
        check_id("user", user, self.n_users())?;
        self.check_window(window)?;
        for &i in items {
            check_id("item", i, self.n_items)?;
        }
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let (x, _) = self.encode(&self.params, &mut tape, user, window)?;
        let (logits, _) = self.decode(&self.params, &mut tape, x, items)?;
        Ok(tape.value(logits).data().to_vec())
    }

    /// Mean binary cross-entropy over all labelled targets plus `l2 / |batch|`
    /// times the squared embedding and output rows touched.
    pub fn loss(&self, params: &ParamSet, tape: &mut Tape, batch: &[CaserExample], l2: f64) -> AdResult<NodeId> {
        let mut logits = Vec::with_capacity(batch.len());
        let mut signs = Vec::new();
        let mut rows = Vec::new();
        for ex in batch {
            let (x, r) = self.encode(params, tape, ex.user, &ex.window)?;
            rows.extend(r);
            let items: Vec<usize> = ex.targets.iter().map(|t| t.0).collect();
            let (l, r) = self.decode(params, tape, x, &items)?;
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

    /// Sliding windows over each user's chronological history; every target
    /// gets `neg_samples` sampled negatives. The padding row is re-zeroed after
    /// every step.
    pub fn fit(&mut self, train: &InteractionTable, opts: &TrainOptions) -> Result<TrainTrace> {
        self.fit_observed(train, opts, |_| {})
    }

    /// Like [`fit`](Self::fit), calling `on_step` after every update.
    pub fn fit_observed(
        &mut self,
        train: &InteractionTable,
        opts: &TrainOptions,
        mut on_step: impl FnMut(&ParamSet),
    ) -> Result<TrainTrace> {
        let data = build_sequences(train, self.config.window, self.config.horizon)?;
        self.windows = data.last_windows();
        let sampler = NegativeSampler::new(train);
        let model = self.clone();
        let (e, pad) = (self.e, self.n_items);
        train_loop(
            &mut self.params,
            opts,
            data.instances.len(),
            |params, idx, rng| {
                let mut batch = Vec::with_capacity(idx.len());
                for &k in idx {
                    let inst = &data.instances[k];
                    let mut targets: Vec<(usize, bool)> = inst.targets.iter().map(|&i| (i, true)).collect();
                    let want = opts.neg_samples * inst.targets.len();
                    if want > 0 && sampler.has_negatives(inst.user, &[]) {
                        let n = want.min(pad - sampler.consumed(inst.user).len());
                        targets.extend(sampler.sample(inst.user, n, &[], rng)?.into_iter().map(|j| (j, false)));
                    }
                    batch.push(CaserExample {
                        user: inst.user,
                        window: inst.history.clone(),
                        targets,
                    });
                }
                let mut tape = Tape::new();
                let loss = model.loss(params, &mut tape, &batch, opts.l2)?;
                Ok(Some((tape, loss)))
            },
            |params| {
                zero_row(params.get_mut(e), pad);
                on_step(params);
            },
        )
    }

    pub fn restore(config: CaserConfig, mut bag: TensorBag) -> Result<Self> {
        config.validate()?;
        let CaserConfig {
            d, window: l, n_h, n_v, ..
        } = config;
        let e_t = bag.take("E", 2)?;
        if e_t.shape()[1] != d || e_t.shape()[0] < 2 {
            return Err(Error::InvalidArgument(format!("item embeddings do not match d = {d}")));
        }
        let n_items = e_t.shape()[0] - 1;
        let p_t = bag.take("P", 2)?;
        if p_t.shape()[1] != d {
            return Err(Error::InvalidArgument(format!("user embeddings do not match d = {d}")));
        }
        let n_users = p_t.shape()[0];
        let mut params = ParamSet::new();
        let e = params.add("E", e_t);
        let mut horizontal = Vec::new();
        if n_h > 0 {
            for h in 1..=l {
                let f = bag.take_shaped(&format!("conv_h{h}"), &[n_h, h, d])?;
                let b = bag.take_shaped(&format!("conv_h{h}_b"), &[n_h])?;
                horizontal.push((
                    params.add(format!("conv_h{h}"), f),
                    params.add(format!("conv_h{h}_b"), b),
                ));
            }
        }
        let vertical = if n_v > 0 {
            Some(params.add("conv_v", bag.take_shaped("conv_v", &[n_v, l])?))
        } else {
            None
        };
        let w_fc = params.add("W_fc", bag.take_shaped("W_fc", &[config.feature_width(), d])?);
        let b_fc = params.add("b_fc", bag.take_shaped("b_fc", &[d])?);
        let p = params.add("P", p_t);
        let w_out = params.add("W_out", bag.take_shaped("W_out", &[n_items, 2 * d])?);
        let b_out = params.add("b_out", bag.take_shaped("b_out", &[n_items, 1])?);
        let windows = bag.take_shaped("windows", &[n_users, l])?;
        bag.finish()?;
        let mut m = Self {
            params,
            config,
            e,
            horizontal,
            vertical,
            w_fc,
            b_fc,
            p,
            w_out,
            b_out,
            n_items,
            windows: Vec::new(),
        };
        m.set_windows(ids_from(&windows).chunks(l).map(<[usize]>::to_vec).collect())?;
        Ok(m)
    }
}

impl Scorer for Caser {
    /// Scores conditioned on the user's last training window.
    fn score(&self, user: usize, items: &[usize]) -> Result<Vec<f64>> {
        check_id("user", user, self.n_users())?;
        self.scores_for(user, &self.windows[user], items)
    }
}

impl Recommender for Caser {
    fn name(&self) -> &'static str {
        "caser"
    }

    fn task(&self) -> Task {
        Task::Ranking
    }

    fn n_users(&self) -> usize {
        self.params.get(self.p).shape()[0]
    }

    fn n_items(&self) -> usize {
        self.n_items
    }

    fn tensors(&self) -> Vec<(String, Tensor)> {
        let flat: Vec<usize> = self.windows.concat();
        let windows = ids_tensor(vec![self.windows.len(), self.config.window], &flat);
        collect_tensors(&self.params, &[("windows", &windows)])
    }
}
