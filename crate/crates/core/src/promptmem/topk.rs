use std::cmp::Ordering;

use crate::error::{Error, Result};

/// One retrieved key-prompt pair. `session` and `index` are 0-based;
/// `flat` is the session-major position in the pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopKEntry {
    pub session: usize,
    pub index: usize,
    pub flat: usize,
    pub sim: f64,
}

/// Entries ordered by descending similarity, ties by ascending `flat`.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKSelection {
    pub entries: Vec<TopKEntry>,
}

impl TopKSelection {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sims(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.sim).collect()
    }

    pub fn contains(&self, session: usize, index: usize) -> bool {
        self.entries
            .iter()
            .any(|e| e.session == session && e.index == index)
    }
}

/// 1-based quotient/remainder pair mapping a flat index `z` onto a table
/// with `m` columns: `Q(z) = floor((z-1)/m) + 1`, `R(z) = z - (Q(z)-1) m`.
pub fn quotient_remainder(z: usize, m: usize) -> (usize, usize) {
    assert!(z >= 1 && m >= 1, "quotient_remainder is 1-based");
    let q = (z - 1) / m + 1;
    (q, z - (q - 1) * m)
}

/// Select the `k` largest similarities across a ragged per-session table.
///
/// The table is flattened session-major, which on rectangular input is the
/// same enumeration as [`quotient_remainder`].
pub fn topk_2d(sims: &[Vec<f64>], k: usize) -> Result<TopKSelection> {
    if k == 0 {
        return Err(Error::Setup("top-K needs K >= 1".into()));
    }
    let mut flat = Vec::new();
    for (session, row) in sims.iter().enumerate() {
        for (index, &sim) in row.iter().enumerate() {
            if !sim.is_finite() {
                return Err(Error::NonFinite("top-K similarity"));
            }
            flat.push(TopKEntry {
                session,
                index,
                flat: flat.len(),
                sim,
            });
        }
    }
    if flat.len() < k {
        return Err(Error::Setup(format!(
            "key-prompt pool holds {} pairs, top-K asks for {k}",
            flat.len()
        )));
    }
    flat.sort_by(|a, b| {
        b.sim
            .partial_cmp(&a.sim)
            .unwrap_or(Ordering::Equal)
            .then(a.flat.cmp(&b.flat))
    });
    flat.truncate(k);
    Ok(TopKSelection { entries: flat })
}
