//! Self-attention over the recent window for short-term intent, blended with
//! a long-term user-item metric distance. Lower raw scores are better.

use drec_autodiff::{NodeId, ParamId, ParamSet, Reduce, Result as AdResult, Tape, Tensor};

use crate::data::{build_sequences, InteractionTable, NegativeSampler};
use crate::error::{Error, Result};
use crate::metrics::Scorer;
use crate::models::common::{
    check_id, clip_rows, collect_tensors, ids_from, ids_tensor, init_rng, normal, sq_dist, sq_penalty, train_loop,
    with_penalty, zero_row, TensorBag, TrainOptions, TrainTrace,
};
use crate::models::{Recommender, Task};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttRecConfig {
    /// Width of both the attention and the long-term embeddings.
    pub d: usize,
    /// Window length `L`.
    pub window: usize,
    /// Weight of the long-term distance.
    pub omega: f64,
    /// Hinge margin.
    pub margin: f64,
    /// Row-norm radius enforced after every step.
    pub clip_rho: f64,
}

impl AttRecConfig {
    pub fn new(d: usize) -> Self {
        Self {
            d,
            window: 5,
            omega: 0.3,
            margin: 0.5,
            clip_rho: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.d > 0
            && self.window > 0
            && (0.0..=1.0).contains(&self.omega)
            && self.margin >= 0.0
            && self.margin.is_finite()
            && self.clip_rho > 0.0
            && self.clip_rho.is_finite();
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid AttRec configuration {self:?}")));
        }
        Ok(())
    }
}

/// `user` with recent `window` preferred `pos` over `neg`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttRecTriple {
    pub user: usize,
    pub window: Vec<usize>,
    pub pos: usize,
    pub neg: usize,
}

#[derive(Debug, Clone)]
pub struct AttRec {
    params: ParamSet,
    config: AttRecConfig,
    /// Short-term item embeddings `[n_items + 1, d]`, last row padding.
    x: ParamId,
    w_q: ParamId,
    w_k: ParamId,
    u: ParamId,
    v: ParamId,
    windows: Vec<Vec<usize>>,
}

impl AttRec {
    pub fn new(n_users: usize, n_items: usize, config: AttRecConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_users == 0 || n_items == 0 {
            return Err(Error::InvalidArgument("AttRec needs n_users, n_items >= 1".into()));
        }
        let d = config.d;
        let mut rng = init_rng(seed);
        let mut params = ParamSet::new();
        let mut x_t = normal(&mut rng, &[n_items + 1, d]);
        zero_row(&mut x_t, n_items);
        let x = params.add("X", x_t);
        let w_q = params.add("W_q", normal(&mut rng, &[d, d]));
        let w_k = params.add("W_k", normal(&mut rng, &[d, d]));
        let u = params.add("U", normal(&mut rng, &[n_users, d]));
        let v = params.add("V", normal(&mut rng, &[n_items, d]));
        Ok(Self {
            params,
            config,
            x,
            w_q,
            w_k,
            u,
            v,
            windows: vec![vec![n_items; config.window]; n_users],
        })
    }

    pub fn config(&self) -> AttRecConfig {
        self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn pad(&self) -> usize {
        self.n_items()
    }

    /// Ids of the short-term table, the user points and the item points.
    pub fn embedding_ids(&self) -> [ParamId; 3] {
        [self.x, self.u, self.v]
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
            check_id("item", i, self.n_items() + 1)?;
        }
        Ok(())
    }

    /// Attention matrix `[L, L]` and short-term intent `[d]` for a window.
    fn attend(&self, params: &ParamSet, tape: &mut Tape, window: &[usize]) -> AdResult<(NodeId, NodeId, NodeId)> {
        let x = tape.param(params, self.x);
        let e = tape.lookup(x, window)?;
        let wq = tape.param(params, self.w_q);
        let wk = tape.param(params, self.w_k);
        let q = tape.matmul(e, wq)?;
        let q = tape.relu(q)?;
        let k = tape.matmul(e, wk)?;
        let k = tape.relu(k)?;
        let kt = tape.transpose(k)?;
        let s = tape.matmul(q, kt)?;
        let s = tape.scale(s, 1.0 / (self.config.d as f64).sqrt())?;
        let a = tape.softmax_rows(s)?;
        let ae = tape.matmul(a, e)?;
        let m = tape.mean_axis(ae, Reduce::Rows)?;
        Ok((a, m, e))
    }

    /// Attention weights for a window, one row per position.
    pub fn attention(&self, window: &[usize]) -> Result<Tensor> {
        self.check_window(window)?;
        let mut tape = Tape::new();
        let (a, _, _) = self.attend(&self.params, &mut tape, window)?;
        Ok(tape.value(a).clone())
    }

    /// The short-term intent vector of a window.
    pub fn intent(&self, window: &[usize]) -> Result<Vec<f64>> {
        self.check_window(window)?;
        let mut tape = Tape::new();
        let (_, m, _) = self.attend(&self.params, &mut tape, window)?;
        Ok(tape.value(m).data().to_vec())
    }

    /// `ω‖U_u − V_i‖² + (1−ω)‖m − X_i‖²` for each item.
    pub fn raw_scores(&self, user: usize, window: &[usize], items: &[usize]) -> Result<Vec<f64>> {
        check_id("user", user, self.n_users())?;
        let omega = self.config.omega;
        let m = if omega < 1.0 { self.intent(window)? } else { Vec::new() };
        if omega == 1.0 {
            self.check_window(window)?;
        }
        let (u, v, x) = (
            self.params.get(self.u),
            self.params.get(self.v),
            self.params.get(self.x),
        );
        items
            .iter()
            .map(|&i| {
                check_id("item", i, self.n_items())?;
                let mut s = 0.0;
                if omega > 0.0 {
                    s += omega * sq_dist(u.row(user), v.row(i));
                }
                if omega < 1.0 {
                    s += (1.0 - omega) * sq_dist(&m, x.row(i));
                }
                Ok(s)
            })
            .collect()
    }

    /// Mean `[γ + s(pos) − s(neg)]_+` plus `l2 / n` times the squared rows
    /// touched.
    pub fn loss(&self, params: &ParamSet, tape: &mut Tape, batch: &[AttRecTriple], l2: f64) -> AdResult<NodeId> {
        let omega = self.config.omega;
        let n = batch.len();
        let pos: Vec<usize> = batch.iter().map(|t| t.pos).collect();
        let neg: Vec<usize> = batch.iter().map(|t| t.neg).collect();
        let mut rows = Vec::new();
        let mut gap: Option<NodeId> = None;
        if omega > 0.0 {
            let users: Vec<usize> = batch.iter().map(|t| t.user).collect();
            let u = tape.param(params, self.u);
            let v = tape.param(params, self.v);
            let uu = tape.lookup(u, &users)?;
            let vp = tape.lookup(v, &pos)?;
            let vn = tape.lookup(v, &neg)?;
            rows.extend([uu, vp, vn]);
            let dp = tape.sq_l2_dist(uu, vp)?;
            let dn = tape.sq_l2_dist(uu, vn)?;
            let g = tape.sub(dp, dn)?;
            gap = Some(tape.scale(g, omega)?);
        }
        if omega < 1.0 {
            let d = self.config.d;
            let mut intents = Vec::with_capacity(n);
            for t in batch {
                let (_, m, e) = self.attend(params, tape, &t.window)?;
                rows.push(e);
                intents.push(tape.reshape(m, &[1, d])?);
            }
            let m = if n == 1 { intents[0] } else { tape.concat(&intents, 0)? };
            let x = tape.param(params, self.x);
            let xp = tape.lookup(x, &pos)?;
            let xn = tape.lookup(x, &neg)?;
            rows.extend([xp, xn]);
            let dp = tape.sq_l2_dist(m, xp)?;
            let dn = tape.sq_l2_dist(m, xn)?;
            let g = tape.sub(dp, dn)?;
            let g = tape.scale(g, 1.0 - omega)?;
            gap = Some(match gap {
                Some(t) => tape.add(t, g)?,
                None => g,
            });
        }
        let gamma = tape.constant(Tensor::scalar(self.config.margin));
        let pre = tape.add(gap.expect("omega selects a branch"), gamma)?;
        let hinge = tape.relu(pre)?;
        let data = tape.mean(hinge)?;
        let penalty = sq_penalty(tape, &rows, l2 / n as f64)?;
        with_penalty(tape, data, penalty)
    }

    /// Clips every embedding row to the radius and re-zeroes padding.
    pub fn project(&mut self) {
        project(&mut self.params, [self.x, self.u, self.v], self.config.clip_rho);
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
        let data = build_sequences(train, self.config.window, 1)?;
        self.windows = data.last_windows();
        let sampler = NegativeSampler::new(train);
        self.project();
        let model = self.clone();
        let ids = [self.x, self.u, self.v];
        let rho = self.config.clip_rho;
        train_loop(
            &mut self.params,
            opts,
            data.instances.len(),
            |params, idx, rng| {
                let mut batch = Vec::with_capacity(idx.len());
                for &k in idx {
                    let inst = &data.instances[k];
                    if !sampler.has_negatives(inst.user, &[]) {
                        continue;
                    }
                    for neg in sampler.sample(inst.user, opts.neg_samples.max(1), &[], rng)? {
                        batch.push(AttRecTriple {
                            user: inst.user,
                            window: inst.history.clone(),
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
            |params| {
                project(params, ids, rho);
                on_step(params);
            },
        )
    }

    pub fn restore(config: AttRecConfig, mut bag: TensorBag) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let x_t = bag.take("X", 2)?;
        if x_t.shape()[1] != d || x_t.shape()[0] < 2 {
            return Err(Error::InvalidArgument(format!("item embeddings do not match d = {d}")));
        }
        let n_items = x_t.shape()[0] - 1;
        let u_t = bag.take("U", 2)?;
        if u_t.shape()[1] != d {
            return Err(Error::InvalidArgument(format!("user embeddings do not match d = {d}")));
        }
        let n_users = u_t.shape()[0];
        let mut params = ParamSet::new();
        let x = params.add("X", x_t);
        let w_q = params.add("W_q", bag.take_shaped("W_q", &[d, d])?);
        let w_k = params.add("W_k", bag.take_shaped("W_k", &[d, d])?);
        let u = params.add("U", u_t);
        let v = params.add("V", bag.take_shaped("V", &[n_items, d])?);
        let windows = bag.take_shaped("windows", &[n_users, config.window])?;
        bag.finish()?;
        let mut m = Self {
            params,
            config,
            x,
            w_q,
            w_k,
            u,
            v,
            windows: Vec::new(),
        };
        m.set_windows(
            ids_from(&windows)
                .chunks(config.window)
                .map(<[usize]>::to_vec)
                .collect(),
        )?;
        Ok(m)
    }
}

fn project(params: &mut ParamSet, ids: [ParamId; 3], rho: f64) {
    for id in ids {
        clip_rows(params.get_mut(id), rho);
    }
    let x = params.get_mut(ids[0]);
    let pad = x.shape()[0] - 1;
    zero_row(x, pad);
}

impl Scorer for AttRec {
    /// Negated raw score for the user's last training window.
    fn score(&self, user: usize, items: &[usize]) -> Result<Vec<f64>> {
        check_id("user", user, self.n_users())?;
        Ok(self
            .raw_scores(user, &self.windows[user], items)?
            .into_iter()
            .map(|s| -s)
            .collect())
    }
}

impl Recommender for AttRec {
    fn name(&self) -> &'static str {
        "attrec"
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
        let flat: Vec<usize> = self.windows.concat();
        let windows = ids_tensor(vec![self.windows.len(), self.config.window], &flat);
        collect_tensors(&self.params, &[("windows", &windows)])
    }
}
