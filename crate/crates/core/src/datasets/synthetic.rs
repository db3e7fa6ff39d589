use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::format::{write_embeddings, ClassInfo, EmbeddingRecord, EmbeddingSet};

pub const TRAIN_DIR: &str = "train";
pub const TEST_DIR: &str = "test";

/// Gaussian clusters around random unit prototypes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub sigma: f64,
    /// Falls back to the run seed when absent.
    pub seed: Option<u64>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            train_per_class: 30,
            test_per_class: 20,
            dim: 32,
            sigma: 0.1,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train: EmbeddingSet,
    pub test: EmbeddingSet,
}

impl SyntheticData {
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_embeddings(&dir.join(TRAIN_DIR), &self.train)?;
        write_embeddings(&dir.join(TEST_DIR), &self.test)
    }
}

pub fn class_name(id: u32) -> String {
    format!("class_{id:03}")
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return v;
    }
    v.into_iter().map(|x| x / n).collect()
}

pub fn gen_synthetic(spec: &SyntheticSpec, fallback_seed: u64) -> Result<SyntheticData> {
    if !(spec.sigma >= 0.0) || !spec.sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {}", spec.sigma)));
    }
    if spec.classes == 0 || spec.dim == 0 {
        return Err(Error::InvalidArgument("classes and dim must be positive".into()));
    }
    let seed = spec.seed.unwrap_or(fallback_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |n: usize| -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    };
    let prototypes: Vec<Vec<f64>> = (0..spec.classes).map(|_| unit(gauss(spec.dim))).collect();

    let classes: Vec<ClassInfo> = (0..spec.classes as u32)
        .map(|id| ClassInfo { id, name: class_name(id) })
        .collect();
    let mut draw = |per_class: usize| -> Vec<EmbeddingRecord> {
        let mut out = Vec::with_capacity(per_class * spec.classes);
        for (c, proto) in prototypes.iter().enumerate() {
            for _ in 0..per_class {
                let noise = gauss(spec.dim);
                let v = unit(proto.iter().zip(noise).map(|(p, n)| p + spec.sigma * n).collect());
                out.push(EmbeddingRecord {
                    class_id: c as u32,
                    feature: v.into_iter().map(|x| x as f32).collect(),
                });
            }
        }
        out
    };
    let train = draw(spec.train_per_class);
    let test = draw(spec.test_per_class);
    let notes = format!("synthetic sigma={} seed={seed}", spec.sigma);
    Ok(SyntheticData {
        train: EmbeddingSet::new(spec.dim as u32, classes.clone(), train, &notes),
        test: EmbeddingSet::new(spec.dim as u32, classes, test, &notes),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::format::read_embeddings;
    use crate::numkernel::cosine_sim;
    use rand::Rng;

    #[test]
    fn zero_sigma_reproduces_prototypes() {
        let spec = SyntheticSpec { sigma: 0.0, classes: 3, dim: 8, ..Default::default() };
        let data = gen_synthetic(&spec, 5).unwrap();
        for c in 0..3u32 {
            let feats: Vec<&Vec<f32>> = data
                .train
                .records
                .iter()
                .chain(&data.test.records)
                .filter(|r| r.class_id == c)
                .map(|r| &r.feature)
                .collect();
            assert!(feats.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn negative_sigma_rejected() {
        let spec = SyntheticSpec { sigma: -0.1, ..Default::default() };
        assert!(matches!(gen_synthetic(&spec, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn same_seed_same_files_and_round_trip() {
        let spec = SyntheticSpec::default();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        gen_synthetic(&spec, 9).unwrap().write(a.path()).unwrap();
        gen_synthetic(&spec, 9).unwrap().write(b.path()).unwrap();
        for sub in [TRAIN_DIR, TEST_DIR] {
            for f in ["manifest.json", "features.bin"] {
                let x = std::fs::read(a.path().join(sub).join(f)).unwrap();
                let y = std::fs::read(b.path().join(sub).join(f)).unwrap();
                assert_eq!(x, y);
            }
        }
        let back = read_embeddings(&a.path().join(TRAIN_DIR)).unwrap();
        assert_eq!(back, gen_synthetic(&spec, 9).unwrap().train);
        assert_eq!(back.class_name(3), Some("class_003"));
    }

    #[test]
    fn intra_class_cosine_exceeds_inter_class() {
        let spec = SyntheticSpec { classes: 10, dim: 32, sigma: 0.1, ..Default::default() };
        let data = gen_synthetic(&spec, 21).unwrap();
        let recs = &data.train.records;
        let f = |i: usize| -> Vec<f64> { recs[i].feature.iter().map(|&v| v as f64).collect() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mut intra, mut inter) = (Vec::new(), Vec::new());
        while intra.len() < 1000 || inter.len() < 1000 {
            let (i, j) = (rng.gen_range(0..recs.len()), rng.gen_range(0..recs.len()));
            if i == j {
                continue;
            }
            let s = cosine_sim(&f(i), &f(j)).unwrap();
            if recs[i].class_id == recs[j].class_id {
                if intra.len() < 1000 {
                    intra.push(s);
                }
            } else if inter.len() < 1000 {
                inter.push(s);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&intra) > mean(&inter) + 0.5, "{} vs {}", mean(&intra), mean(&inter));
    }
}
