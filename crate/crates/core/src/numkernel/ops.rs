//! Scalar-valued primitives shared by the forward path and the tape.

use crate::error::{Error, Result};

use super::tensor::{dot, norm};

/// Probability floor applied inside the cross-entropy log.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("softmax of an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax input"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Cosine similarity. Zero-norm inputs are rejected rather than mapped to 0.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "cosine_sim: lengths {} and {} differ",
            a.len(),
            b.len()
        )));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain("cosine similarity of a zero vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// `-ln(probs[target])`, with the probability clamped at [`PROB_FLOOR`].
pub fn cross_entropy(probs: &[f64], target: usize) -> Result<f64> {
    if target >= probs.len() {
        return Err(Error::Index {
            index: target,
            len: probs.len(),
        });
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 || probs.iter().any(|p| *p < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "cross_entropy expects a probability vector, sum is {total}"
        )));
    }
    let p = probs[target];
    if p < PROB_FLOOR {
        log::warn!("cross_entropy: probability {p:e} clamped to {PROB_FLOOR:e}");
    }
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Index of the largest entry; ties go to the smaller index.
pub fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in v.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}
