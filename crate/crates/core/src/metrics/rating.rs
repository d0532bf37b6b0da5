use crate::error::{Error, Result};

/// Root mean square and mean absolute error over `(predicted, actual)`.
pub fn rmse_mae(pairs: &[(f64, f64)]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::Empty("no prediction pairs".into()));
    }
    let n = pairs.len() as f64;
    let (mut sq, mut abs) = (0.0, 0.0);
    for &(p, a) in pairs {
        if !(p.is_finite() && a.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite pair ({p}, {a})")));
        }
        sq += (p - a) * (p - a);
        abs += (p - a).abs();
    }
    Ok(((sq / n).sqrt(), abs / n))
}
