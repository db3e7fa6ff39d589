//! IOSF-EMB: a JSON manifest plus a little-endian binary feature blob.
//!
//! `features.bin` layout:
//!
//! ```text
//! "IOSF"  u32 version=1  u32 dim  u64 count
//! count x ( u32 class_id, dim x f32 )
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EMB_MAGIC: &[u8; 4] = b"IOSF";
pub const EMB_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FEATURES_FILE: &str = "features.bin";

const HEADER_LEN: usize = 4 + 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub version: u32,
    pub dim: u32,
    pub count: u64,
    pub classes: Vec<ClassInfo>,
    #[serde(default)]
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub class_id: u32,
    pub feature: Vec<f32>,
}

/// Manifest and records of one IOSF-EMB directory.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub manifest: EmbeddingManifest,
    pub records: Vec<EmbeddingRecord>,
}

impl EmbeddingSet {
    pub fn new(dim: u32, classes: Vec<ClassInfo>, records: Vec<EmbeddingRecord>, notes: &str) -> Self {
        Self {
            manifest: EmbeddingManifest {
                version: EMB_VERSION,
                dim,
                count: records.len() as u64,
                classes,
                notes: notes.to_string(),
            },
            records,
        }
    }

    pub fn class_name(&self, id: u32) -> Option<&str> {
        self.manifest
            .classes
            .iter()
            .find(|c| c.id == id)
            .map(|c| c.name.as_str())
    }

    /// Cross-check manifest against records.
    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        if m.version != EMB_VERSION {
            return Err(Error::format(0, format!("manifest version {} unsupported", m.version)));
        }
        if m.count != self.records.len() as u64 {
            return Err(Error::format(
                0,
                format!(
                    "manifest count {} does not match {} records in {FEATURES_FILE}",
                    m.count,
                    self.records.len()
                ),
            ));
        }
        let mut ids = BTreeSet::new();
        for c in &m.classes {
            if !ids.insert(c.id) {
                return Err(Error::format(0, format!("class id {} listed twice", c.id)));
            }
        }
        for (i, r) in self.records.iter().enumerate() {
            if r.feature.len() != m.dim as usize {
                return Err(Error::format(
                    record_offset(i, m.dim as usize),
                    format!("record {i} has dim {}, manifest says {}", r.feature.len(), m.dim),
                ));
            }
            if !ids.contains(&r.class_id) {
                return Err(Error::format(
                    record_offset(i, m.dim as usize),
                    format!("record {i} has class id {} absent from manifest", r.class_id),
                ));
            }
        }
        Ok(())
    }
}

fn record_offset(index: usize, dim: usize) -> u64 {
    (HEADER_LEN + index * (4 + 4 * dim)) as u64
}

pub fn encode_features(dim: u32, records: &[EmbeddingRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + records.len() * (4 + 4 * dim as usize));
    out.extend_from_slice(EMB_MAGIC);
    out.extend_from_slice(&EMB_VERSION.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        out.extend_from_slice(&r.class_id.to_le_bytes());
        for v in &r.feature {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Little-endian cursor that reports the byte offset of every failure.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(Error::format(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// `n` finite `f32` values.
    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let start = self.pos;
        let raw = self.take(n.saturating_mul(4), what)?;
        let vals: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(k) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::format(
                (start + 4 * k) as u64,
                format!("non-finite value in {what}"),
            ));
        }
        Ok(vals)
    }
}

/// Decode `features.bin`, returning `(dim, records)`.
pub fn decode_features(bytes: &[u8]) -> Result<(u32, Vec<EmbeddingRecord>)> {
    let mut r = Reader::new(bytes);
    r.magic(EMB_MAGIC)?;
    let version = r.u32("version")?;
    if version != EMB_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let dim = r.u32("dim")?;
    if dim == 0 {
        return Err(Error::format(8, "dim must be positive"));
    }
    let count = r.u64("count")?;
    let record_len = 4 + 4 * dim as u64;
    let available = r.remaining() as u64 / record_len;
    if available < count {
        let at = r.pos() as u64 + available * record_len;
        return Err(Error::format(
            at,
            format!("truncated blob: record {available} of {count} is incomplete"),
        ));
    }
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let class_id = r.u32("class id")?;
        let feature = r.f32s(dim as usize, &format!("record {}", records.len()))?;
        records.push(EmbeddingRecord { class_id, feature });
    }
    if r.remaining() != 0 {
        return Err(Error::format(
            r.pos() as u64,
            format!("{} trailing bytes after {count} records", r.remaining()),
        ));
    }
    Ok((dim, records))
}

pub fn parse_manifest(text: &str) -> Result<EmbeddingManifest> {
    serde_json::from_str(text).map_err(|e| {
        Error::format(
            line_col_offset(text, e.line(), e.column()),
            format!("{MANIFEST_FILE}: {e}"),
        )
    })
}

pub(crate) fn line_col_offset(text: &str, line: usize, column: usize) -> u64 {
    let before: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (before + column.saturating_sub(1)) as u64
}

/// Decode both halves of an IOSF-EMB pair and cross-check them.
pub fn decode_embedding_set(manifest: &str, features: &[u8]) -> Result<EmbeddingSet> {
    let manifest = parse_manifest(manifest)?;
    let (dim, records) = decode_features(features)?;
    if dim != manifest.dim {
        return Err(Error::format(8, format!("blob dim {dim} differs from manifest dim {}", manifest.dim)));
    }
    let set = EmbeddingSet { manifest, records };
    set.validate()?;
    Ok(set)
}

pub fn write_embeddings(dir: &Path, set: &EmbeddingSet) -> Result<()> {
    set.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = serde_json::to_string_pretty(&set.manifest)
        .map_err(|e| Error::Contract(format!("manifest serialization: {e}")))?;
    manifest.push('\n');
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    let fpath = dir.join(FEATURES_FILE);
    fs::write(&fpath, encode_features(set.manifest.dim, &set.records)).map_err(|e| Error::io(&fpath, e))
}

pub fn read_embeddings(dir: &Path) -> Result<EmbeddingSet> {
    let mpath = dir.join(MANIFEST_FILE);
    let manifest = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let fpath = dir.join(FEATURES_FILE);
    let features = fs::read(&fpath).map_err(|e| Error::io(&fpath, e))?;
    decode_embedding_set(&manifest, &features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_set() -> EmbeddingSet {
        let classes = vec![
            ClassInfo { id: 0, name: "dog".into() },
            ClassInfo { id: 7, name: "cat".into() },
        ];
        let records = vec![
            EmbeddingRecord { class_id: 0, feature: vec![0.5, -1.0, 2.0, 0.0] },
            EmbeddingRecord { class_id: 7, feature: vec![1.5, 1.0, -0.25, 3.0] },
            EmbeddingRecord { class_id: 0, feature: vec![f32::MIN_POSITIVE, 1e-30, -7.0, 9.5] },
        ];
        EmbeddingSet::new(4, classes, records, "fixture")
    }

    #[test]
    fn round_trip_three_samples() {
        let dir = tempfile::tempdir().unwrap();
        let set = sample_set();
        write_embeddings(dir.path(), &set).unwrap();
        assert_eq!(read_embeddings(dir.path()).unwrap(), set);
    }

    #[test]
    fn truncated_blob_names_record() {
        let set = sample_set();
        let bytes = encode_features(4, &set.records);
        let cut = &bytes[..bytes.len() - 3];
        match decode_features(cut) {
            Err(Error::Format { offset, message }) => {
                assert!(message.contains("record 2"), "{message}");
                assert_eq!(offset, (HEADER_LEN + 2 * 20) as u64);
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn count_mismatch_and_bad_magic() {
        let mut set = sample_set();
        set.manifest.count = 5;
        assert!(matches!(set.validate(), Err(Error::Format { .. })));

        let mut bytes = encode_features(4, &sample_set().records);
        bytes[0] = b'X';
        assert!(matches!(decode_features(&bytes), Err(Error::Format { offset: 0, .. })));

        let mut bytes = encode_features(4, &sample_set().records);
        bytes[4] = 2;
        assert!(matches!(decode_features(&bytes), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode_features(4, &sample_set().records);
        bytes.push(0);
        assert!(decode_features(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_finite_payloads_round_trip(
            dim in 1u32..6,
            raw in prop::collection::vec((0u32..4, prop::collection::vec(any::<f32>(), 6)), 0..10),
        ) {
            let records: Vec<EmbeddingRecord> = raw
                .into_iter()
                .map(|(c, f)| EmbeddingRecord {
                    class_id: c,
                    feature: f[..dim as usize]
                        .iter()
                        .map(|v| if v.is_finite() { *v } else { 0.0 })
                        .collect(),
                })
                .collect();
            let bytes = encode_features(dim, &records);
            let (d, back) = decode_features(&bytes).unwrap();
            prop_assert_eq!(d, dim);
            prop_assert_eq!(back.len(), records.len());
            for (a, b) in back.iter().zip(&records) {
                prop_assert_eq!(a.class_id, b.class_id);
                let ab: Vec<u32> = a.feature.iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u32> = b.feature.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(ab, bb);
            }
        }

        #[test]
        fn decoder_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..128)) {
            let _ = decode_features(&bytes);
            let mut with_magic = b"IOSF\x01\x00\x00\x00".to_vec();
            with_magic.extend_from_slice(&bytes);
            let _ = decode_features(&with_magic);
        }
    }
}
