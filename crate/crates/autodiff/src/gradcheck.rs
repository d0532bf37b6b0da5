//! Central finite-difference check of tape gradients.

use crate::error::{AutodiffError, Result};
use crate::params::ParamSet;
use crate::tape::{NodeId, Tape};

/// Finite-difference step.
pub const STEP: f64 = 1e-6;

/// `|a − b| / max(1, |a|, |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamError {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<ParamError>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }
}

fn scalar_loss(tape: &Tape, loss: NodeId, what: &str) -> Result<f64> {
    let v = tape.value(loss);
    let x = v
        .item()
        .ok_or_else(|| AutodiffError::NonScalarLoss(v.shape().to_vec()))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(AutodiffError::NonFinite(what.to_string()))
    }
}

/// Compares `backward` against central differences for every element of
/// every parameter.
///
/// `build` must be a pure function of the parameter values (seed any dropout
/// on the tape it creates identically on every call).
pub fn grad_check<F>(params: &ParamSet, tolerance: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet) -> Result<(Tape, NodeId)>,
{
    let (tape, loss) = build(params)?;
    scalar_loss(&tape, loss, "loss")?;
    let grads = tape.backward(loss)?;

    let mut probe = params.clone();
    let mut entries = Vec::with_capacity(params.len());
    for (id, name, tensor) in params.iter() {
        let analytic = grads
            .param(id)
            .map(|g| g.into_data())
            .unwrap_or_else(|| vec![0.0; tensor.len()]);
        if analytic.iter().any(|g| !g.is_finite()) {
            return Err(AutodiffError::NonFinite(name.to_string()));
        }
        let mut worst = (0.0, 0);
        for k in 0..tensor.len() {
            let orig = tensor.data()[k];
            probe.get_mut(id).data_mut()[k] = orig + STEP;
            let (t, l) = build(&probe)?;
            let plus = scalar_loss(&t, l, name)?;
            probe.get_mut(id).data_mut()[k] = orig - STEP;
            let (t, l) = build(&probe)?;
            let minus = scalar_loss(&t, l, name)?;
            probe.get_mut(id).data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * STEP);
            let err = relative_error(analytic[k], numeric);
            if err > worst.0 {
                worst = (err, k);
            }
        }
        entries.push(ParamError {
            name: name.to_string(),
            max_rel_error: worst.0,
            worst_index: worst.1,
        });
    }
    Ok(GradCheckReport { entries, tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn constant_loss_has_zero_error() {
        let mut set = ParamSet::new();
        set.add("w", Tensor::vector(vec![1.0, 2.0]));
        let report = grad_check(&set, 1e-4, |_| {
            let mut tape = Tape::new();
            let c = tape.constant(Tensor::scalar(4.0));
            Ok((tape, c))
        })
        .unwrap();
        assert_eq!(report.max_rel_error(), 0.0);
        assert!(report.passed());
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut set = ParamSet::new();
        let w = set.add("w", Tensor::scalar(1.0));
        let err = grad_check(&set, 1e-4, |p| {
            let mut tape = Tape::new();
            let x = tape.param(p, w);
            let inf = tape.constant(Tensor::scalar(f64::INFINITY));
            let y = tape.mul(x, inf)?;
            Ok((tape, y))
        })
        .unwrap_err();
        assert_eq!(err, AutodiffError::NonFinite("loss".into()));
    }
}
