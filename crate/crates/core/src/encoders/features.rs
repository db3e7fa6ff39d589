use std::collections::BTreeMap;
use std::path::Path;

use crate::datasets::{read_embeddings, EmbeddingSet};
use crate::error::{Error, Result};

/// Read access to labeled image features, indexed by sample position.
pub trait FeatureAccess {
    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    fn feature(&self, id: usize) -> &[f64];
    fn label(&self, id: usize) -> u32;
    fn class_name(&self, id: u32) -> Option<&str>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Precomputed image features standing in for the image encoder, widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatureSource {
    dim: usize,
    features: Vec<Vec<f64>>,
    labels: Vec<u32>,
    names: BTreeMap<u32, String>,
}

impl ImageFeatureSource {
    pub fn from_set(set: &EmbeddingSet) -> Result<Self> {
        set.validate()?;
        let features: Vec<Vec<f64>> = set
            .records
            .iter()
            .map(|r| r.feature.iter().map(|&v| v as f64).collect())
            .collect();
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::format(0, "non-finite feature"));
        }
        Ok(Self {
            dim: set.manifest.dim as usize,
            features,
            labels: set.records.iter().map(|r| r.class_id).collect(),
            names: set
                .manifest
                .classes
                .iter()
                .map(|c| (c.id, c.name.clone()))
                .collect(),
        })
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn class_names(&self) -> &BTreeMap<u32, String> {
        &self.names
    }
}

impl FeatureAccess for ImageFeatureSource {
    fn dim(&self) -> usize {
        self.dim
    }

    fn len(&self) -> usize {
        self.features.len()
    }

    fn feature(&self, id: usize) -> &[f64] {
        &self.features[id]
    }

    fn label(&self, id: usize) -> u32 {
        self.labels[id]
    }

    fn class_name(&self, id: u32) -> Option<&str> {
        self.names.get(&id).map(String::as_str)
    }
}

/// Load an IOSF-EMB directory (`manifest.json` + `features.bin`).
pub fn load_image_features(dir: &Path) -> Result<ImageFeatureSource> {
    ImageFeatureSource::from_set(&read_embeddings(dir)?)
}
