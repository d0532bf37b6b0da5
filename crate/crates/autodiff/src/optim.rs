//! First-order optimizers over a [`ParamSet`].

use crate::error::{AutodiffError, Result};
use crate::params::{ParamId, ParamSet};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

/// Learning rate, step counter and (for Adam) per-parameter moments.
///
/// Parameters absent from a step's gradient list are left untouched, so a
/// table that no loss term reads is never moved.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    lr: f64,
    t: u64,
    moments: Vec<Option<(Tensor, Tensor)>>,
}

impl OptimizerState {
    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    /// Adam with β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn adam(lr: f64) -> Self {
        Self::new(
            OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
            },
            lr,
        )
    }

    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            t: 0,
            moments: Vec::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Number of applied steps.
    pub fn t(&self) -> u64 {
        self.t
    }

    /// First and second moments for `id`; always `None` for SGD.
    pub fn moments(&self, id: ParamId) -> Option<(&Tensor, &Tensor)> {
        self.moments
            .get(id.index())
            .and_then(Option::as_ref)
            .map(|(m, v)| (m, v))
    }

    /// Applies one update. Every gradient is shape-checked before any
    /// parameter is written.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[(ParamId, Tensor)]) -> Result<()> {
        for (id, g) in grads {
            let p = params.get(*id);
            if p.shape() != g.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "optimizer step",
                    expected: format!("{:?} for `{}`", p.shape(), params.name(*id)),
                    actual: format!("{:?}", g.shape()),
                });
            }
        }
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (id, g) in grads {
                    sgd_update(params.get_mut(*id), g, self.lr);
                }
            }
            OptimizerKind::Adam { beta1, beta2, epsilon } => {
                if self.moments.len() < params.len() {
                    self.moments.resize(params.len(), None);
                }
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                for (id, g) in grads {
                    let p = params.get_mut(*id);
                    let (m, v) =
                        self.moments[id.index()].get_or_insert_with(|| (g.same_shape_zeros(), g.same_shape_zeros()));
                    let (md, vd) = (m.data_mut(), v.data_mut());
                    for (k, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        md[k] = beta1 * md[k] + (1.0 - beta1) * gv;
                        vd[k] = beta2 * vd[k] + (1.0 - beta2) * gv * gv;
                        let m_hat = md[k] / c1;
                        let v_hat = vd[k] / c2;
                        *pv -= self.lr * m_hat / (v_hat.sqrt() + epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

/// `p ← p − lr·g`.
pub fn sgd_step(param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(AutodiffError::ShapeMismatch {
            op: "sgd_step",
            expected: format!("{:?}", param.shape()),
            actual: format!("{:?}", grad.shape()),
        });
    }
    sgd_update(param, grad, lr);
    Ok(())
}

fn sgd_update(param: &mut Tensor, grad: &Tensor, lr: f64) {
    for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p -= lr * g;
    }
}
