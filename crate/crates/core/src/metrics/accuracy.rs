use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer-exact hit count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Count {
    pub correct: u64,
    pub total: u64,
}

impl Count {
    pub fn record(&mut self, hit: bool) {
        self.correct += hit as u64;
        self.total += 1;
    }

    pub fn merge(&mut self, other: Count) {
        self.correct += other.correct;
        self.total += other.total;
    }

    /// `None` when nothing was evaluated.
    pub fn fraction(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

/// Fraction of samples with truth in `subset` whose prediction is right.
/// `None` signals an empty filtered set.
pub fn accuracy_subset(predicted: &[u32], truth: &[u32], subset: &BTreeSet<u32>) -> Result<Option<f64>> {
    if predicted.len() != truth.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    let mut count = Count::default();
    for (p, t) in predicted.iter().zip(truth) {
        if subset.contains(t) {
            count.record(p == t);
        }
    }
    Ok(count.fraction())
}

/// Counts of one evaluation split three ways.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    /// Classes seen so far.
    pub all: Count,
    /// Base-session classes.
    pub base: Count,
    /// Classes of incremental sessions; empty after session 1.
    pub novel: Count,
}

impl EvalCounts {
    pub fn merge(&mut self, other: EvalCounts) {
        self.all.merge(other.all);
        self.base.merge(other.base);
        self.novel.merge(other.novel);
    }

    pub fn row(&self, session: usize) -> Result<AccuracyRow> {
        let undefined = |what: &str| Error::Setup(format!("session {session}: no {what} test samples"));
        Ok(AccuracyRow {
            session,
            all: self.all.fraction().ok_or_else(|| undefined("seen-class"))?,
            base: self.base.fraction().ok_or_else(|| undefined("base-class"))?,
            novel: self.novel.fraction(),
        })
    }
}

/// `A^t` over all seen, base and novel classes (fractions).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    /// 1-based.
    pub session: usize,
    pub all: f64,
    pub base: f64,
    pub novel: Option<f64>,
}
