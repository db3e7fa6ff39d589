//! IOSF-TOK: padded token-embedding matrices per class.
//!
//! ```text
//! "IOST"  u32 version=1  u32 l_ctx  u32 dim  u64 class_count
//! class_count x ( u32 class_id, u32 valid_len, l_ctx*dim x f32 )
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::format::Reader;

pub const TOK_MAGIC: &[u8; 4] = b"IOST";
pub const TOK_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenRecord {
    pub class_id: u32,
    pub valid_len: u32,
    /// Row-major `l_ctx x dim`.
    pub rows: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenFile {
    pub l_ctx: u32,
    pub dim: u32,
    pub records: Vec<TokenRecord>,
}

impl TokenFile {
    pub fn get(&self, class_id: u32) -> Option<&TokenRecord> {
        self.records.iter().find(|r| r.class_id == class_id)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(TOK_MAGIC);
        out.extend_from_slice(&TOK_VERSION.to_le_bytes());
        out.extend_from_slice(&self.l_ctx.to_le_bytes());
        out.extend_from_slice(&self.dim.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&r.class_id.to_le_bytes());
            out.extend_from_slice(&r.valid_len.to_le_bytes());
            for v in &r.rows {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(TOK_MAGIC)?;
        let version = r.u32("version")?;
        if version != TOK_VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let l_ctx = r.u32("l_ctx")?;
        let dim = r.u32("dim")?;
        if l_ctx == 0 || dim == 0 {
            return Err(Error::format(8, "l_ctx and dim must be positive"));
        }
        let count = r.u64("class_count")?;
        let matrix = l_ctx as u64 * dim as u64;
        let record_len = matrix.saturating_mul(4).saturating_add(8);
        if (r.remaining() as u64) < count.saturating_mul(record_len) {
            let complete = r.remaining() as u64 / record_len;
            return Err(Error::format(
                r.pos() as u64 + complete * record_len,
                format!("truncated blob: record {complete} of {count} is incomplete"),
            ));
        }
        let mut seen = BTreeSet::new();
        let mut records = Vec::with_capacity(count as usize);
        for i in 0..count {
            let at = r.pos() as u64;
            let class_id = r.u32("class id")?;
            let valid_len = r.u32("valid_len")?;
            if valid_len == 0 || valid_len > l_ctx {
                return Err(Error::format(
                    at + 4,
                    format!("record {i}: valid_len {valid_len} outside 1..={l_ctx}"),
                ));
            }
            if !seen.insert(class_id) {
                return Err(Error::format(at, format!("record {i}: duplicate class id {class_id}")));
            }
            let rows = r.f32s(matrix as usize, &format!("record {i}"))?;
            records.push(TokenRecord {
                class_id,
                valid_len,
                rows,
            });
        }
        if r.remaining() != 0 {
            return Err(Error::format(r.pos() as u64, "trailing bytes after last record"));
        }
        Ok(Self { l_ctx, dim, records })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}
