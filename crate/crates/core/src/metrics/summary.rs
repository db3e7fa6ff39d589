use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::accuracy::AccuracyRow;

/// Session-level accuracy history, one row per evaluated session.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub rows: Vec<AccuracyRow>,
}

/// Fractions, not percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub avg: f64,
    pub pd: f64,
    /// Absent with a single session.
    pub nla: Option<f64>,
    pub bma: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (n, s) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    s / n as f64
}

/// AVG, PD, NLA and BMA over the first `t` sessions.
pub fn summarize(matrix: &AccuracyMatrix, t: usize) -> Result<Summary> {
    if t == 0 || matrix.rows.len() < t {
        return Err(Error::Setup(format!(
            "accuracy matrix has {} sessions, summary needs {t}",
            matrix.rows.len()
        )));
    }
    let rows = &matrix.rows[..t];
    for (i, r) in rows.iter().enumerate() {
        if r.session != i + 1 || (i > 0 && r.novel.is_none()) {
            return Err(Error::Setup(format!("accuracy matrix incomplete at session {}", i + 1)));
        }
    }
    let nla = (t > 1).then(|| mean(rows[1..].iter().filter_map(|r| r.novel)));
    Ok(Summary {
        avg: mean(rows.iter().map(|r| r.all)),
        pd: rows[0].base - rows[t - 1].all,
        nla,
        bma: mean(rows.iter().map(|r| r.base)),
    })
}
