use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class labels and sample indices of one session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSplit {
    pub classes: Vec<u32>,
    /// Indices into the training set.
    pub train: Vec<usize>,
    /// Indices into the test set; covers every class seen so far.
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FscilSplit {
    pub sessions: Vec<SessionSplit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitParams {
    pub base_classes: usize,
    pub ways: usize,
    pub shots: usize,
    pub sessions: usize,
    pub seed: u64,
}

impl FscilSplit {
    pub fn session_sizes(&self) -> Vec<usize> {
        self.sessions.iter().map(|s| s.classes.len()).collect()
    }

    /// Classes of sessions `0..=t` (0-based).
    pub fn seen_classes(&self, t: usize) -> BTreeSet<u32> {
        self.sessions[..=t]
            .iter()
            .flat_map(|s| s.classes.iter().copied())
            .collect()
    }

    /// Check the disjointness and coverage invariants.
    pub fn validate(&self, train_labels: &[u32], test_labels: &[u32]) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (t, s) in self.sessions.iter().enumerate() {
            for c in &s.classes {
                if !seen.insert(*c) {
                    return Err(Error::Setup(format!(
                        "class {c} appears in more than one session (session {})",
                        t + 1
                    )));
                }
            }
            let own: BTreeSet<u32> = s.classes.iter().copied().collect();
            if let Some(&i) = s.train.iter().find(|&&i| !own.contains(&train_labels[i])) {
                return Err(Error::Setup(format!(
                    "session {} trains on sample {i} of foreign class {}",
                    t + 1,
                    train_labels[i]
                )));
            }
            let expected: Vec<usize> = (0..test_labels.len())
                .filter(|&i| seen.contains(&test_labels[i]))
                .collect();
            if s.test != expected {
                return Err(Error::Setup(format!(
                    "session {} test set does not cover exactly the seen classes",
                    t + 1
                )));
            }
        }
        Ok(())
    }
}

/// Seeded class partition: `base_classes` classes in session 1, then
/// `sessions - 1` sessions of `ways` classes with `shots` training samples each.
pub fn make_fscil_splits(
    train_labels: &[u32],
    test_labels: &[u32],
    params: SplitParams,
) -> Result<FscilSplit> {
    let SplitParams {
        base_classes,
        ways,
        shots,
        sessions,
        seed,
    } = params;
    if sessions == 0 || base_classes == 0 {
        return Err(Error::Setup("need at least one session with one base class".into()));
    }
    if sessions > 1 && (ways == 0 || shots == 0) {
        return Err(Error::Setup("incremental sessions need ways > 0 and shots > 0".into()));
    }
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &c) in train_labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let needed = base_classes + (sessions - 1) * ways;
    if by_class.len() < needed {
        return Err(Error::Setup(format!(
            "split needs {needed} classes, training set has {}",
            by_class.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<u32> = by_class.keys().copied().collect();
    order.shuffle(&mut rng);

    let mut out = Vec::with_capacity(sessions);
    let mut seen = BTreeSet::new();
    for t in 0..sessions {
        let (start, len) = if t == 0 {
            (0, base_classes)
        } else {
            (base_classes + (t - 1) * ways, ways)
        };
        let mut classes = order[start..start + len].to_vec();
        classes.sort_unstable();

        let mut train = Vec::new();
        for c in &classes {
            let pool = &by_class[c];
            if t == 0 {
                train.extend_from_slice(pool);
            } else {
                if pool.len() < shots {
                    return Err(Error::Setup(format!(
                        "class {c} has {} training samples, {shots} shots requested",
                        pool.len()
                    )));
                }
                let mut picked: Vec<usize> = pool.choose_multiple(&mut rng, shots).copied().collect();
                picked.sort_unstable();
                train.extend(picked);
            }
        }
        seen.extend(classes.iter().copied());
        let test = (0..test_labels.len())
            .filter(|&i| seen.contains(&test_labels[i]))
            .collect();
        out.push(SessionSplit {
            classes,
            train,
            test,
        });
    }
    Ok(FscilSplit { sessions: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(classes: u32, per_class: usize) -> Vec<u32> {
        (0..classes).flat_map(|c| std::iter::repeat(c).take(per_class)).collect()
    }

    fn params(base: usize, ways: usize, shots: usize, sessions: usize, seed: u64) -> SplitParams {
        SplitParams {
            base_classes: base,
            ways,
            shots,
            sessions,
            seed,
        }
    }

    #[test]
    fn mini_imagenet_protocol_sizes() {
        let tr = labels(100, 6);
        let te = labels(100, 2);
        let s = make_fscil_splits(&tr, &te, params(60, 5, 5, 9, 1)).unwrap();
        assert_eq!(s.session_sizes(), vec![60, 5, 5, 5, 5, 5, 5, 5, 5]);
        for sess in &s.sessions[1..] {
            assert_eq!(sess.train.len(), 25);
        }
        assert_eq!(s.sessions[8].test.len(), 200);
        s.validate(&tr, &te).unwrap();
    }

    #[test]
    fn cub200_protocol_sizes() {
        let tr = labels(200, 5);
        let te = labels(200, 1);
        let s = make_fscil_splits(&tr, &te, params(100, 10, 5, 11, 3)).unwrap();
        let mut expect = vec![100];
        expect.extend(std::iter::repeat(10).take(10));
        assert_eq!(s.session_sizes(), expect);
    }

    #[test]
    fn single_session_has_no_shot_constraint() {
        let tr = labels(4, 1);
        let te = labels(4, 1);
        let s = make_fscil_splits(&tr, &te, params(4, 0, 0, 1, 0)).unwrap();
        assert_eq!(s.session_sizes(), vec![4]);
        assert_eq!(s.sessions[0].train.len(), 4);
    }

    #[test]
    fn insufficient_classes_or_shots() {
        let tr = labels(5, 3);
        assert!(make_fscil_splits(&tr, &tr, params(4, 2, 1, 2, 0)).is_err());
        assert!(make_fscil_splits(&tr, &tr, params(3, 2, 4, 2, 0)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn splits_are_disjoint_and_sized(seed in any::<u64>()) {
            let tr = labels(12, 7);
            let te = labels(12, 3);
            let s = make_fscil_splits(&tr, &te, params(6, 2, 5, 4, seed)).unwrap();
            s.validate(&tr, &te).unwrap();
            for (t, sess) in s.sessions.iter().enumerate() {
                if t > 0 {
                    prop_assert_eq!(sess.train.len(), 10);
                }
                prop_assert_eq!(sess.test.len(), 3 * s.seen_classes(t).len());
            }
        }
    }
}
