//! `IOSC` container: magic, u32 version, u64 manifest length, JSON manifest,
//! then little-endian `f32` blobs at the offsets the manifest lists.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::format::Reader;
use crate::error::{Error, Result};
use crate::metrics::SessionReport;
use crate::model::Model;
use crate::numkernel::{ParamId, SgdState, Tensor};
use crate::params::{class_param_name, key_param_name, parse_param_name, prompt_param_name, ParamRole, ParamStore};
use crate::promptmem::{ClassEntry, ClassTokenBank, KeyMap, KeyPromptMemory, KeyPromptPair};
use crate::encoders::{TextEncoder, Tokenizer};

use super::config::RunConfig;

pub const CKPT_MAGIC: &[u8; 4] = b"IOSC";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// `u128` as decimal text.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = |what: &str| Error::format(0, format!("checkpoint PRNG state: bad {what}"));
        let bytes = hex::decode(&self.seed).map_err(|_| bad("seed"))?;
        let seed: [u8; 32] = bytes.try_into().map_err(|_| bad("seed length"))?;
        let pos: u128 = self.word_pos.parse().map_err(|_| bad("word position"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassRecord {
    pub class_id: u32,
    pub name: String,
    pub valid_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob section.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    sessions_completed: usize,
    config: RunConfig,
    rng: RngState,
    encoder_digest: String,
    classes: Vec<Vec<ClassRecord>>,
    pairs: Vec<usize>,
    tensors: Vec<TensorEntry>,
    velocities: Vec<TensorEntry>,
    reports: Vec<SessionReport>,
}

/// A named `f32` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    fn from_tensor(name: &str, t: &Tensor) -> Self {
        Self {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| v as f32).collect(),
        }
    }

    fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(self.shape.clone(), self.data.iter().map(|&v| v as f64).collect())
            .map_err(|e| Error::format(0, format!("tensor {}: {e}", self.name)))
    }
}

/// Complete training state after some number of sessions.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub sessions_completed: usize,
    pub config: RunConfig,
    pub rng: RngState,
    pub encoder_digest: String,
    pub classes: Vec<Vec<ClassRecord>>,
    pub pairs: Vec<usize>,
    pub tensors: Vec<NamedTensor>,
    pub velocities: Vec<NamedTensor>,
    pub reports: Vec<SessionReport>,
}

fn entries(ts: &[NamedTensor], offset: &mut u64) -> Vec<TensorEntry> {
    ts.iter()
        .map(|t| {
            let e = TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset: *offset,
            };
            *offset += 4 * t.data.len() as u64;
            e
        })
        .collect()
}

impl Checkpoint {
    /// Snapshot of a model after `reports.len()` sessions.
    pub fn capture(config: &RunConfig, model: &Model, sgd: &SgdState, rng: &ChaCha8Rng, reports: &[SessionReport]) -> Self {
        let store = &model.store;
        Self {
            sessions_completed: reports.len(),
            config: config.clone(),
            rng: RngState::capture(rng),
            encoder_digest: model.encoder.digest(),
            classes: model
                .bank
                .sessions()
                .iter()
                .map(|s| {
                    s.iter()
                        .map(|c| ClassRecord {
                            class_id: c.class_id,
                            name: c.name.clone(),
                            valid_len: c.valid_len,
                        })
                        .collect()
                })
                .collect(),
            pairs: model.memory.sessions().iter().map(Vec::len).collect(),
            tensors: store
                .ids()
                .map(|id| NamedTensor::from_tensor(&store.meta(id).name, store.get(id)))
                .collect(),
            velocities: sgd
                .velocities()
                .map(|(id, v)| NamedTensor::from_tensor(&store.meta(id).name, v))
                .collect(),
            reports: reports.to_vec(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let tensors = entries(&self.tensors, &mut offset);
        let velocities = entries(&self.velocities, &mut offset);
        let manifest = Manifest {
            sessions_completed: self.sessions_completed,
            config: self.config.clone(),
            rng: self.rng.clone(),
            encoder_digest: self.encoder_digest.clone(),
            classes: self.classes.clone(),
            pairs: self.pairs.clone(),
            tensors,
            velocities,
            reports: self.reports.clone(),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.tensors.iter().chain(&self.velocities) {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(CKPT_MAGIC)?;
        let version = r.u32("version")?;
        if version != CKPT_VERSION {
            return Err(Error::format(4, format!("checkpoint version {version}, expected {CKPT_VERSION}")));
        }
        let len = r.u64("manifest length")?;
        if len > r.remaining() as u64 {
            return Err(Error::format(8, format!("manifest length {len} exceeds the {} bytes left", r.remaining())));
        }
        let start = r.pos() as u64;
        let json = r.take(len as usize, "manifest")?;
        let manifest: Manifest = serde_json::from_slice(json)
            .map_err(|e| Error::format(start + e.column() as u64, format!("checkpoint manifest: {e}")))?;
        let blob_start = r.pos() as u64;
        let mut expected = 0u64;
        let mut read = |entries: &[TensorEntry], r: &mut Reader<'_>| -> Result<Vec<NamedTensor>> {
            entries
                .iter()
                .map(|e| {
                    if e.offset != expected {
                        return Err(Error::format(
                            blob_start + expected,
                            format!("tensor {} at offset {}, expected {expected}", e.name, e.offset),
                        ));
                    }
                    let n = e
                        .shape
                        .iter()
                        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                        .filter(|&n| n > 0 && n <= r.remaining() / 4)
                        .ok_or_else(|| {
                            Error::format(blob_start + expected, format!("tensor {} has bad shape {:?}", e.name, e.shape))
                        })?;
                    let data = r.f32s(n, &e.name)?;
                    expected += 4 * n as u64;
                    Ok(NamedTensor {
                        name: e.name.clone(),
                        shape: e.shape.clone(),
                        data,
                    })
                })
                .collect()
        };
        let tensors = read(&manifest.tensors, &mut r)?;
        let velocities = read(&manifest.velocities, &mut r)?;
        if r.remaining() != 0 {
            return Err(Error::format(r.pos() as u64, format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self {
            sessions_completed: manifest.sessions_completed,
            config: manifest.config,
            rng: manifest.rng,
            encoder_digest: manifest.encoder_digest,
            classes: manifest.classes,
            pairs: manifest.pairs,
            tensors,
            velocities,
            reports: manifest.reports,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    /// Structural agreement with a config supplied at resume time.
    pub fn check_compatible(&self, config: &RunConfig) -> Result<()> {
        let ours = &self.config;
        let pairs = [
            ("dim", ours.dim, config.dim),
            ("l_ctx", ours.l_ctx, config.l_ctx),
        ];
        for (key, a, b) in pairs {
            if a != b {
                return Err(Error::format(0, format!("checkpoint has {key} {a}, config says {b}")));
            }
        }
        if ours.keymap_variant != config.keymap_variant {
            return Err(Error::format(0, "checkpoint key-map variant differs from config"));
        }
        Ok(())
    }

    /// Rebuild the model, optimizer and PRNG.
    pub fn restore(&self) -> Result<(Model, SgdState, ChaCha8Rng)> {
        let cfg = &self.config;
        cfg.validate()
            .map_err(|e| Error::format(0, format!("checkpoint config echo: {e}")))?;
        let encoder = TextEncoder::new(cfg.seed, cfg.l_ctx, cfg.dim)?;
        if encoder.digest() != self.encoder_digest {
            return Err(Error::format(0, "text encoder digest does not match the checkpoint"));
        }
        if self.classes.len() != self.sessions_completed || self.pairs.len() != self.sessions_completed {
            return Err(Error::format(0, "session counts in checkpoint disagree"));
        }
        if self.reports.len() != self.sessions_completed {
            return Err(Error::format(0, "report history length disagrees with session count"));
        }

        let mut store = ParamStore::new();
        for t in &self.tensors {
            let role = parse_param_name(&t.name)
                .ok_or_else(|| Error::format(0, format!("unknown tensor name `{}`", t.name)))?;
            let value = t.to_tensor()?;
            check_shape(&t.name, role, value.shape(), cfg)?;
            store
                .add(&t.name, role, value)
                .map_err(|_| Error::format(0, format!("tensor `{}` listed twice", t.name)))?;
        }
        let find = |name: String| {
            store
                .find(&name)
                .ok_or_else(|| Error::format(0, format!("checkpoint lacks tensor `{name}`")))
        };

        let mut bank = ClassTokenBank::new();
        let mut memory = KeyPromptMemory::new();
        let mut referenced = 0usize;
        for (s, classes) in self.classes.iter().enumerate() {
            if classes.is_empty() || self.pairs[s] == 0 {
                return Err(Error::format(0, format!("session {} is empty in checkpoint", s + 1)));
            }
            for (i, c) in classes.iter().enumerate() {
                if c.valid_len == 0 || c.valid_len > cfg.l_ctx {
                    return Err(Error::format(0, format!("class {} has valid_len {}", c.class_id, c.valid_len)));
                }
                if bank.iter_seen().any(|(_, e)| e.class_id == c.class_id) {
                    return Err(Error::format(0, format!("class {} appears twice", c.class_id)));
                }
                bank.push_restored(
                    s,
                    ClassEntry {
                        class_id: c.class_id,
                        name: c.name.clone(),
                        param: find(class_param_name(s, i))?,
                        valid_len: c.valid_len,
                    },
                );
                referenced += 1;
            }
            for i in 0..self.pairs[s] {
                memory.push_restored(KeyPromptPair {
                    key: find(key_param_name(s, i))?,
                    prompt: find(prompt_param_name(s, i))?,
                    owner_session: s,
                    index_in_session: i,
                });
                referenced += 2;
            }
        }
        let keymap = KeyMap::restore(cfg.keymap_variant, &store)?;
        referenced += keymap.params.len();
        if referenced != store.len() {
            return Err(Error::format(0, "checkpoint holds tensors no session owns"));
        }
        if memory.num_sessions() > 0 && memory.pool_size() < cfg.k_pr {
            return Err(Error::format(0, "key-prompt pool smaller than k_pr"));
        }

        let mut sgd = SgdState::new(cfg.sgd());
        for v in &self.velocities {
            let id: ParamId = store
                .find(&v.name)
                .ok_or_else(|| Error::format(0, format!("velocity for unknown tensor `{}`", v.name)))?;
            let value = v.to_tensor()?;
            if value.shape() != store.get(id).shape() {
                return Err(Error::format(0, format!("velocity `{}` has the wrong shape", v.name)));
            }
            if sgd.velocity(id).is_some() {
                return Err(Error::format(0, format!("velocity `{}` listed twice", v.name)));
            }
            sgd.set_velocity(id, value);
        }

        let model = Model {
            encoder,
            tokenizer: Tokenizer::new(cfg.seed, cfg.l_ctx, cfg.dim),
            keymap,
            bank,
            memory,
            store,
        };
        Ok((model, sgd, self.rng.restore()?))
    }
}

fn check_shape(name: &str, role: ParamRole, shape: &[usize], cfg: &RunConfig) -> Result<()> {
    let (l, d) = (cfg.l_ctx, cfg.dim);
    let ok = match role {
        ParamRole::KeyMap => shape == [d, d] || shape == [d],
        ParamRole::ClassEmbedding { .. } | ParamRole::Prompt { .. } => shape == [l, d],
        ParamRole::Key { .. } => shape == [d],
    };
    if ok {
        Ok(())
    } else {
        Err(Error::format(0, format!("tensor `{name}` has shape {shape:?}, config implies dim {d}, l_ctx {l}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::SyntheticSpec;
    use crate::trainer::{DataBundle, Runner};
    use proptest::prelude::*;

    fn tiny() -> RunConfig {
        RunConfig {
            dim: 4,
            l_ctx: 6,
            n_pairs_base: 3,
            n_pairs_inc: 1,
            k_pr: 2,
            base_classes: 2,
            ways: 1,
            shots: 2,
            sessions: 2,
            epochs_base: 1,
            epochs_inc: 1,
            synthetic: Some(SyntheticSpec {
                classes: 3,
                train_per_class: 3,
                test_per_class: 2,
                dim: 4,
                ..SyntheticSpec::default()
            }),
            ..RunConfig::default()
        }
    }

    fn sample() -> Checkpoint {
        let cfg = tiny();
        let data = DataBundle::load(&cfg).unwrap();
        let mut runner = Runner::new(&cfg, &data).unwrap();
        runner.step().unwrap();
        runner.checkpoint()
    }

    #[test]
    fn encode_decode_round_trip() {
        let ck = sample();
        let bytes = ck.encode();
        assert_eq!(&bytes[..4], CKPT_MAGIC);
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn restore_reproduces_model() {
        let cfg = tiny();
        let data = DataBundle::load(&cfg).unwrap();
        let mut runner = Runner::new(&cfg, &data).unwrap();
        runner.step().unwrap();
        let (model, _, _) = runner.checkpoint().restore().unwrap();
        assert_eq!(&model, runner.model());
    }

    #[test]
    fn rng_state_round_trip() {
        use rand::RngCore;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        rng.set_stream(2);
        rng.next_u64();
        let mut back = RngState::capture(&rng).restore().unwrap();
        assert_eq!(back.next_u64(), rng.next_u64());
        let bad = RngState { seed: "zz".into(), stream: 0, word_pos: "0".into() };
        assert!(bad.restore().is_err());
    }

    #[test]
    fn rejects_damage() {
        let bytes = sample().encode();
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(matches!(Checkpoint::decode(&wrong_magic), Err(Error::Format { .. })));
        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        assert!(matches!(Checkpoint::decode(&wrong_version), Err(Error::Format { .. })));
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(Checkpoint::decode(&trailing).is_err());
        let mut huge = bytes.clone();
        huge[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(Checkpoint::decode(&huge).is_err());
    }

    #[test]
    fn tampered_tensor_fails_restore() {
        let mut ck = sample();
        ck.tensors.retain(|t| t.name != "E.1.0");
        assert!(ck.restore().is_err());
        let mut ck = sample();
        ck.encoder_digest = "0".repeat(64);
        assert!(ck.restore().is_err());
    }

    #[test]
    fn compatibility_check() {
        let ck = sample();
        ck.check_compatible(&tiny()).unwrap();
        let other = RunConfig { dim: 8, ..tiny() };
        assert!(matches!(ck.check_compatible(&other), Err(Error::Format { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]
        #[test]
        fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = Checkpoint::decode(&bytes);
        }

        #[test]
        fn flipped_byte_never_panics(idx in any::<prop::sample::Index>(), val in any::<u8>()) {
            let mut bytes = sample().encode();
            let i = idx.index(bytes.len());
            bytes[i] = val;
            if let Ok(ck) = Checkpoint::decode(&bytes) {
                let _ = ck.restore();
            }
        }
    }
}
