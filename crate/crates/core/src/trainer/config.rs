use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::SyntheticSpec;
use crate::error::{Error, Result};
use crate::numkernel::SgdConfig;
use crate::promptmem::{KeyMapVariant, PairInit};

/// Which parameters an incremental session may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateScope {
    /// Class embeddings, keys and prompts of the current session.
    #[default]
    CurrentOnly,
    /// Current session plus the key-map.
    PlusKeymap,
    /// Everything learnable.
    AllParams,
}

impl UpdateScope {
    pub const ALL: [UpdateScope; 3] = [UpdateScope::CurrentOnly, UpdateScope::PlusKeymap, UpdateScope::AllParams];

    pub fn as_str(self) -> &'static str {
        match self {
            UpdateScope::CurrentOnly => "current_only",
            UpdateScope::PlusKeymap => "plus_keymap",
            UpdateScope::AllParams => "all_params",
        }
    }
}

/// One run, fully specified. Every key is optional in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dim: usize,
    pub l_ctx: usize,
    pub seed: u64,
    pub tau: f64,
    /// Key-prompt pairs created in session 1.
    pub n_pairs_base: usize,
    /// Key-prompt pairs created in each later session.
    pub n_pairs_inc: usize,
    pub k_pr: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs_base: usize,
    pub epochs_inc: usize,
    pub keymap_variant: KeyMapVariant,
    pub update_scope: UpdateScope,
    pub pair_init: PairInit,
    pub base_classes: usize,
    pub ways: usize,
    pub shots: usize,
    pub sessions: usize,
    /// IOSF-EMB directories; synthetic data is generated when both are absent.
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    /// Optional IOSF-TOK file used for class-embedding initialization.
    pub token_embeddings: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sgd = SgdConfig::default();
        Self {
            dim: 32,
            l_ctx: 16,
            seed: 0,
            tau: 1.0,
            n_pairs_base: 20,
            n_pairs_inc: 3,
            k_pr: 3,
            lr: sgd.lr,
            momentum: sgd.momentum,
            weight_decay: sgd.weight_decay,
            batch_size: 16,
            epochs_base: 5,
            epochs_inc: 3,
            keymap_variant: KeyMapVariant::Fc1,
            update_scope: UpdateScope::CurrentOnly,
            pair_init: PairInit::ClassEmbedding,
            base_classes: 6,
            ways: 2,
            shots: 5,
            sessions: 3,
            train_data: None,
            test_data: None,
            token_embeddings: None,
            synthetic: None,
        }
    }
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

/// Name of an unknown field from a serde message, if that is what it is.
fn unknown_field(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("unknown field `")?;
    rest.split('`').next()
}

impl RunConfig {
    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    /// Pairs created in session `t` (0-based).
    pub fn n_pairs(&self, t: usize) -> usize {
        if t == 0 {
            self.n_pairs_base
        } else {
            self.n_pairs_inc
        }
    }

    pub fn epochs(&self, t: usize) -> usize {
        if t == 0 {
            self.epochs_base
        } else {
            self.epochs_inc
        }
    }

    /// Total classes the protocol consumes.
    pub fn total_classes(&self) -> usize {
        self.base_classes + self.sessions.saturating_sub(1) * self.ways
    }

    /// Synthetic spec with the run's dimension and enough classes.
    pub fn synthetic_spec(&self) -> SyntheticSpec {
        self.synthetic.clone().unwrap_or_else(|| SyntheticSpec {
            classes: self.total_classes(),
            dim: self.dim,
            ..SyntheticSpec::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("l_ctx", self.l_ctx),
            ("n_pairs_base", self.n_pairs_base),
            ("k_pr", self.k_pr),
            ("batch_size", self.batch_size),
            ("base_classes", self.base_classes),
            ("sessions", self.sessions),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(config_err(key, "must be at least 1"));
            }
        }
        if self.sessions > 1 {
            for (key, v) in [("n_pairs_inc", self.n_pairs_inc), ("ways", self.ways), ("shots", self.shots)] {
                if v == 0 {
                    return Err(config_err(key, "must be at least 1 when sessions > 1"));
                }
            }
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(config_err("tau", "must be positive and finite"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(config_err("lr", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(config_err("momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(config_err("weight_decay", "must be non-negative"));
        }
        if self.k_pr > self.n_pairs_base {
            return Err(config_err(
                "k_pr",
                format!("{} exceeds the {} pairs available in session 1", self.k_pr, self.n_pairs_base),
            ));
        }
        if self.train_data.is_some() != self.test_data.is_some() {
            return Err(config_err("train_data", "train_data and test_data must be given together"));
        }
        if self.train_data.is_some() && self.synthetic.is_some() {
            return Err(config_err("synthetic", "cannot be combined with train_data/test_data"));
        }
        if let Some(s) = &self.synthetic {
            if s.dim != self.dim {
                return Err(config_err("synthetic.dim", format!("{} differs from dim {}", s.dim, self.dim)));
            }
            if s.classes < self.total_classes() {
                return Err(config_err(
                    "synthetic.classes",
                    format!("{} classes, protocol needs {}", s.classes, self.total_classes()),
                ));
            }
        }
        Ok(())
    }

    /// Canonical JSON, also the config echo written into run directories.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// SHA-256 of the canonical JSON.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

/// Strict parse plus validation; errors name the offending key.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.inner().to_string();
        let key = match (path.as_str(), unknown_field(&message)) {
            (".", Some(field)) => field.to_string(),
            (p, _) => p.to_string(),
        };
        config_err(&key, message)
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key_of(text: &str) -> String {
        match parse_config(text) {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_object_is_default() {
        let c = parse_config("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!((c.lr, c.momentum, c.weight_decay), (0.002, 0.9, 0.0005));
        assert_eq!((c.batch_size, c.epochs_base, c.epochs_inc), (16, 5, 3));
        assert_eq!((c.k_pr, c.n_pairs_base, c.n_pairs_inc, c.tau), (3, 20, 3, 1.0));
    }

    #[test]
    fn explicit_epochs_match_defaults() {
        let c = parse_config(r#"{"epochs_base": 5, "epochs_inc": 3}"#).unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn type_mismatch_names_key() {
        assert_eq!(key_of(r#"{"lr": "fast"}"#), "lr");
        assert_eq!(key_of(r#"{"synthetic": {"sigma": "x"}}"#), "synthetic.sigma");
    }

    #[test]
    fn unknown_key_is_named() {
        assert_eq!(key_of(r#"{"learning_rate": 0.1}"#), "learning_rate");
        assert_eq!(key_of(r#"{"synthetic": {"noise": 0.1}}"#), "synthetic.noise");
    }

    #[test]
    fn semantic_checks() {
        assert_eq!(key_of(r#"{"tau": 0}"#), "tau");
        assert_eq!(key_of(r#"{"k_pr": 30}"#), "k_pr");
        assert_eq!(key_of(r#"{"train_data": "x"}"#), "train_data");
        assert_eq!(key_of(r#"{"synthetic": {"dim": 8}}"#), "synthetic.dim");
        assert_eq!(key_of(r#"{"momentum": 1.0}"#), "momentum");
        assert!(matches!(parse_config("[1"), Err(Error::Config { .. })));
    }

    #[test]
    fn enum_spellings() {
        let c = parse_config(r#"{"keymap_variant": "RES2", "update_scope": "all_params", "pair_init": "random"}"#).unwrap();
        assert_eq!(c.keymap_variant, KeyMapVariant::Res2);
        assert_eq!(c.update_scope, UpdateScope::AllParams);
        assert_eq!(c.pair_init, PairInit::Random);
    }

    #[test]
    fn json_echo_round_trips() {
        let mut c = RunConfig::default();
        c.tau = 16.0;
        c.synthetic = Some(c.synthetic_spec());
        assert_eq!(parse_config(&c.to_json()).unwrap(), c);
        assert_eq!(c.digest().len(), 64);
    }
}
