//! Flat store of every learnable tensor, tagged with its owning session.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numkernel::{ParamId, Tensor};

/// What a parameter is. Sessions are 0-based here; names use 1-based numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ParamRole {
    /// Key-map weights (`θ`); trained in the base session only.
    KeyMap,
    ClassEmbedding { session: usize, class: usize },
    Key { session: usize, index: usize },
    Prompt { session: usize, index: usize },
}

impl ParamRole {
    pub fn owner_session(&self) -> Option<usize> {
        match *self {
            ParamRole::KeyMap => None,
            ParamRole::ClassEmbedding { session, .. }
            | ParamRole::Key { session, .. }
            | ParamRole::Prompt { session, .. } => Some(session),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamMeta {
    pub name: String,
    pub role: ParamRole,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    values: Vec<Tensor>,
    meta: Vec<ParamMeta>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, role: ParamRole, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.find(&name).is_some() {
            return Err(Error::Contract(format!("parameter `{name}` registered twice")));
        }
        self.values.push(value);
        self.meta.push(ParamMeta { name, role });
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn meta(&self, id: ParamId) -> &ParamMeta {
        &self.meta[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.meta.iter().position(|m| m.name == name).map(ParamId)
    }

    /// SHA-256 of the parameter's `f64` bytes.
    pub fn digest(&self, id: ParamId) -> String {
        hex::encode(Sha256::digest(self.values[id.0].to_le_bytes()))
    }

    pub fn quantize_f32(&mut self) {
        self.values.iter_mut().for_each(Tensor::quantize_f32);
    }
}

pub fn class_param_name(session: usize, class: usize) -> String {
    format!("E.{}.{class}", session + 1)
}

pub fn key_param_name(session: usize, index: usize) -> String {
    format!("k.{}.{index}", session + 1)
}

pub fn prompt_param_name(session: usize, index: usize) -> String {
    format!("Pr.{}.{index}", session + 1)
}

/// Inverse of the naming scheme; `None` for names it never produces.
pub fn parse_param_name(name: &str) -> Option<ParamRole> {
    if let Some(rest) = name.strip_prefix("theta.") {
        return (!rest.is_empty()).then_some(ParamRole::KeyMap);
    }
    let mut parts = name.split('.');
    let (kind, t, i) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() {
        return None;
    }
    let t: usize = t.parse().ok()?;
    let i: usize = i.parse().ok()?;
    let session = t.checked_sub(1)?;
    match kind {
        "E" => Some(ParamRole::ClassEmbedding { session, class: i }),
        "k" => Some(ParamRole::Key { session, index: i }),
        "Pr" => Some(ParamRole::Prompt { session, index: i }),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        assert_eq!(
            parse_param_name(&class_param_name(0, 3)),
            Some(ParamRole::ClassEmbedding { session: 0, class: 3 })
        );
        assert_eq!(parse_param_name(&key_param_name(2, 0)), Some(ParamRole::Key { session: 2, index: 0 }));
        assert_eq!(parse_param_name(&prompt_param_name(1, 7)), Some(ParamRole::Prompt { session: 1, index: 7 }));
        assert_eq!(parse_param_name("theta.w1"), Some(ParamRole::KeyMap));
        for bad in ["E.0.1", "E.1", "E.1.2.3", "X.1.1", "theta.", "k.a.1", ""] {
            assert_eq!(parse_param_name(bad), None, "{bad}");
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add("theta.w", ParamRole::KeyMap, Tensor::scalar(1.0)).unwrap();
        assert!(s.add("theta.w", ParamRole::KeyMap, Tensor::scalar(1.0)).is_err());
    }
}
