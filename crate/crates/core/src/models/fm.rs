//! Degree-2 factorization machines over sparse feature rows.

use drec_autodiff::{NodeId, ParamId, ParamSet, Reduce, Result as AdResult, Tape, Tensor};

use crate::data::{InteractionTable, SparseRow};
use crate::error::{Error, Result};
use crate::metrics::Scorer;
use crate::models::common::{
    check_id, collect_tensors, init_rng, normal, signed_logistic, sq_penalty, train_loop, TensorBag, TrainOptions,
    TrainTrace,
};
use crate::models::{Recommender, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmTask {
    /// Squared loss on real labels.
    Regression,
    /// Logistic loss on labels in {0, 1}.
    Binary,
}

/// `½ Σ_f [(Σ_i V_if x_i)² − Σ_i V_if² x_i²]`, linear in the number of
/// features.
pub fn pairwise_term(v: &Tensor, features: &[(usize, f64)]) -> Result<f64> {
    let (n, k) = v
        .dims2()
        .ok_or_else(|| Error::InvalidArgument("V must be a matrix".into()))?;
    let mut sum = vec![0.0; k];
    let mut sum_sq = vec![0.0; k];
    for &(i, x) in features {
        check_id("feature", i, n)?;
        for (f, vf) in v.row(i).iter().enumerate() {
            let t = vf * x;
            sum[f] += t;
            sum_sq[f] += t * t;
        }
    }
    Ok(0.5 * sum.iter().zip(&sum_sq).map(|(s, q)| s * s - q).sum::<f64>())
}

/// `w0 + Σ w_i x_i + pairwise_term`.
pub fn score_fm(w0: f64, w: &[f64], v: &Tensor, row: &SparseRow) -> Result<f64> {
    let mut linear = 0.0;
    for &(i, x) in &row.features {
        check_id("feature", i, w.len())?;
        linear += w[i] * x;
    }
    Ok(w0 + linear + pairwise_term(v, &row.features)?)
}

/// Per-group L2 weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FmRegularization {
    pub w0: f64,
    pub w: f64,
    pub v: f64,
}

impl FmRegularization {
    /// The same weight on `w` and `V`, none on the intercept.
    pub fn uniform(l2: f64) -> Self {
        Self { w0: 0.0, w: l2, v: l2 }
    }
}

#[derive(Debug, Clone)]
pub struct Fm {
    params: ParamSet,
    w0: ParamId,
    w: ParamId,
    v: ParamId,
    task: FmTask,
    /// Label range seen in training; regression predictions are clipped to it.
    range: (f64, f64),
    /// `(n_users, n_items)` when features are one-hot user and item ids.
    layout: Option<(usize, usize)>,
}

impl Fm {
    pub fn new(n_features: usize, k: usize, task: FmTask, seed: u64) -> Result<Self> {
        if k == 0 || n_features == 0 {
            return Err(Error::InvalidArgument(
                "FM needs k >= 1 and at least one feature".into(),
            ));
        }
        let mut rng = init_rng(seed);
        let mut params = ParamSet::new();
        let w0 = params.add("w0", Tensor::vector(vec![0.0]));
        let w = params.add("w", Tensor::zeros(vec![n_features, 1]));
        let v = params.add("V", normal(&mut rng, &[n_features, k]));
        Ok(Self {
            params,
            w0,
            w,
            v,
            task,
            range: (f64::NEG_INFINITY, f64::INFINITY),
            layout: None,
        })
    }

    /// An FM over one-hot user and item indicators (`user`, `n_users + item`).
    pub fn for_interactions(train: &InteractionTable, k: usize, seed: u64) -> Result<Self> {
        let (nu, ni) = (train.n_users(), train.n_items());
        let mut fm = Self::new(nu + ni, k, FmTask::Regression, seed)?;
        fm.layout = Some((nu, ni));
        Ok(fm)
    }

    /// One-hot rows for `train`, labelled with the ratings.
    pub fn interaction_rows(&self, table: &InteractionTable) -> Result<Vec<SparseRow>> {
        let (nu, _) = self
            .layout
            .ok_or_else(|| Error::InvalidArgument("FM was not built over user/item indicators".into()))?;
        Ok(table
            .interactions()
            .iter()
            .map(|x| SparseRow {
                label: x.rating,
                features: vec![(x.user, 1.0), (nu + x.item, 1.0)],
            })
            .collect())
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn task(&self) -> FmTask {
        self.task
    }

    pub fn set_task(&mut self, task: FmTask) {
        self.task = task;
    }

    pub fn n_features(&self) -> usize {
        self.params.get(self.w).shape()[0]
    }

    /// The raw model output (a logit for binary tasks).
    pub fn raw_score(&self, row: &SparseRow) -> Result<f64> {
        let w0 = self.params.get(self.w0).data()[0];
        score_fm(w0, self.params.get(self.w).data(), self.params.get(self.v), row)
    }

    /// Clipped rating for regression, probability for binary.
    pub fn predict(&self, row: &SparseRow) -> Result<f64> {
        let s = self.raw_score(row)?;
        Ok(match self.task {
            FmTask::Regression => s.clamp(self.range.0, self.range.1),
            FmTask::Binary => 1.0 / (1.0 + (-s).exp()),
        })
    }

    /// Batched FM output on the tape.
    ///
    /// Feature entries of the whole batch are gathered into one `[nnz, k]`
    /// block; a `[batch, nnz]` 0/1 matrix sums them back per row.
    fn forward(&self, params: &ParamSet, tape: &mut Tape, rows: &[&SparseRow]) -> AdResult<(NodeId, Vec<NodeId>)> {
        let b = rows.len();
        let k = params.get(self.v).shape()[1];
        let mut idx = Vec::new();
        let mut vals = Vec::new();
        let mut segment = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            for &(i, x) in &row.features {
                idx.push(i);
                vals.push(x);
                segment.push(r);
            }
        }
        let w0 = tape.param(params, self.w0);
        if idx.is_empty() {
            let zeros = tape.constant(Tensor::zeros(vec![b]));
            return Ok((tape.add(zeros, w0)?, vec![w0]));
        }
        let nnz = idx.len();
        let mut s = vec![0.0; b * nnz];
        for (e, &r) in segment.iter().enumerate() {
            s[r * nnz + e] = 1.0;
        }
        let s = tape.constant(Tensor::new(vec![b, nnz], s)?);

        let v_t = tape.param(params, self.v);
        let ve = tape.lookup(v_t, &idx)?;
        let xrep: Vec<f64> = vals.iter().flat_map(|&x| std::iter::repeat_n(x, k)).collect();
        let xrep = tape.constant(Tensor::new(vec![nnz, k], xrep)?);
        let vx = tape.mul(ve, xrep)?;
        let sums = tape.matmul(s, vx)?;
        let sums_sq = tape.mul(sums, sums)?;
        let t1 = tape.sum_axis(sums_sq, Reduce::Cols)?;
        let vx_sq = tape.mul(vx, vx)?;
        let sq_sums = tape.matmul(s, vx_sq)?;
        let t2 = tape.sum_axis(sq_sums, Reduce::Cols)?;
        let diff = tape.sub(t1, t2)?;
        let pair = tape.scale(diff, 0.5)?;

        let w_t = tape.param(params, self.w);
        let we = tape.lookup(w_t, &idx)?;
        let xcol = tape.constant(Tensor::new(vec![nnz, 1], vals)?);
        let wx = tape.mul(we, xcol)?;
        let lin = tape.matmul(s, wx)?;
        let lin = tape.reshape(lin, &[b])?;

        let out = tape.add(pair, lin)?;
        Ok((tape.add(out, w0)?, vec![w0, we, ve]))
    }

    /// Mean data loss plus `reg / batch` times the squared looked-up weights.
    pub fn loss(
        &self,
        params: &ParamSet,
        tape: &mut Tape,
        rows: &[&SparseRow],
        reg: FmRegularization,
    ) -> AdResult<NodeId> {
        let b = rows.len() as f64;
        let (pred, used) = self.forward(params, tape, rows)?;
        let labels: Vec<f64> = rows.iter().map(|r| r.label).collect();
        let data = match self.task {
            FmTask::Regression => {
                let y = tape.constant(Tensor::vector(labels));
                let err = tape.sub(pred, y)?;
                let sq = tape.mul(err, err)?;
                tape.mean(sq)?
            }
            FmTask::Binary => {
                let signs = labels.iter().map(|&y| if y > 0.5 { 1.0 } else { -1.0 }).collect();
                signed_logistic(tape, pred, signs)?
            }
        };
        let mut total = data;
        let groups = [reg.w0, reg.w / b, reg.v / b];
        for (node, factor) in used.iter().zip(groups) {
            if let Some(p) = sq_penalty(tape, &[*node], factor)? {
                total = tape.add(total, p)?;
            }
        }
        Ok(total)
    }

    pub fn fit(&mut self, rows: &[SparseRow], opts: &TrainOptions) -> Result<TrainTrace> {
        self.fit_regularized(rows, opts, FmRegularization::uniform(opts.l2))
    }

    pub fn fit_regularized(
        &mut self,
        rows: &[SparseRow],
        opts: &TrainOptions,
        reg: FmRegularization,
    ) -> Result<TrainTrace> {
        if rows.is_empty() {
            return Err(Error::Empty("no FM training rows".into()));
        }
        let n = self.n_features();
        for (r, row) in rows.iter().enumerate() {
            if let Some(&(i, _)) = row.features.iter().find(|(i, _)| *i >= n) {
                return Err(Error::InvalidArgument(format!(
                    "row {r}: feature {i} outside the {n}-feature model"
                )));
            }
            if self.task == FmTask::Binary && row.label != 0.0 && row.label != 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "row {r}: binary FM needs labels in {{0, 1}}, got {}",
                    row.label
                )));
            }
        }
        if self.task == FmTask::Regression {
            let lo = rows.iter().map(|r| r.label).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r.label).fold(f64::NEG_INFINITY, f64::max);
            self.range = (lo, hi);
        }
        let model = self.clone();
        train_loop(
            &mut self.params,
            opts,
            rows.len(),
            |params, idx, _| {
                let batch: Vec<&SparseRow> = idx.iter().map(|&k| &rows[k]).collect();
                let mut tape = Tape::new();
                let loss = model.loss(params, &mut tape, &batch, reg)?;
                Ok(Some((tape, loss)))
            },
            |_| {},
        )
    }

    pub fn restore(task: FmTask, mut bag: TensorBag) -> Result<Self> {
        let v_t = bag.take("V", 2)?;
        let n = v_t.shape()[0];
        let w0_t = bag.take_shaped("w0", &[1])?;
        let w_t = bag.take_shaped("w", &[n, 1])?;
        let ctx = bag.take_shaped("context", &[4])?;
        bag.finish()?;
        let c = ctx.data();
        let layout = (c[2] > 0.0).then(|| (c[2] as usize, c[3] as usize));
        let mut params = ParamSet::new();
        let w0 = params.add("w0", w0_t);
        let w = params.add("w", w_t);
        let v = params.add("V", v_t);
        Ok(Self {
            params,
            w0,
            w,
            v,
            task,
            range: (c[0], c[1]),
            layout,
        })
    }

    fn indicator_row(&self, user: usize, item: usize) -> Result<SparseRow> {
        let (nu, ni) = self
            .layout
            .ok_or_else(|| Error::InvalidArgument("FM trained on feature rows cannot score user/item pairs".into()))?;
        check_id("user", user, nu)?;
        check_id("item", item, ni)?;
        Ok(SparseRow {
            label: 0.0,
            features: vec![(user, 1.0), (nu + item, 1.0)],
        })
    }
}

impl Scorer for Fm {
    fn score(&self, user: usize, items: &[usize]) -> Result<Vec<f64>> {
        items
            .iter()
            .map(|&i| self.predict(&self.indicator_row(user, i)?))
            .collect()
    }
}

impl Recommender for Fm {
    fn name(&self) -> &'static str {
        "fm"
    }

    fn task(&self) -> Task {
        Task::Rating
    }

    fn as_fm(&self) -> Option<&Fm> {
        Some(self)
    }

    fn n_users(&self) -> usize {
        self.layout.map_or(0, |l| l.0)
    }

    fn n_items(&self) -> usize {
        self.layout.map_or(0, |l| l.1)
    }

    fn tensors(&self) -> Vec<(String, Tensor)> {
        let (nu, ni) = self.layout.unwrap_or((0, 0));
        let ctx = Tensor::vector(vec![self.range.0, self.range.1, nu as f64, ni as f64]);
        collect_tensors(&self.params, &[("context", &ctx)])
    }
}
