//! Central-difference gradient oracle.

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Central differences `(f(p + eps e) - f(p - eps e)) / (2 eps)` for every
/// coordinate of every parameter selected by `which`.
pub fn finite_diff_grad<F>(
    f: F,
    params: &[Tensor],
    which: &[bool],
    eps: f64,
) -> Result<Vec<Option<Tensor>>>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    if which.len() != params.len() {
        return Err(Error::Contract("selection mask length differs from params".into()));
    }
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for (p, &selected) in which.iter().enumerate() {
        if !selected {
            out.push(None);
            continue;
        }
        let mut grad = Tensor::zeros(params[p].shape());
        for i in 0..params[p].len() {
            let x = params[p].data()[i];
            work[p].data_mut()[i] = x + eps;
            let plus = f(&work)?;
            work[p].data_mut()[i] = x - eps;
            let minus = f(&work)?;
            work[p].data_mut()[i] = x;
            grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
        }
        out.push(Some(grad));
    }
    Ok(out)
}

/// Coordinate-wise agreement: `|a - b| <= abs_floor` or
/// `|a - b| / max(|a|, |b|) < rel_tol`.
pub fn grads_match(a: &[f64], b: &[f64], rel_tol: f64, abs_floor: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| coord_match(*x, *y, rel_tol, abs_floor))
}

pub fn coord_match(x: f64, y: f64, rel_tol: f64, abs_floor: f64) -> bool {
    let diff = (x - y).abs();
    diff <= abs_floor || diff / x.abs().max(y.abs()) < rel_tol
}
