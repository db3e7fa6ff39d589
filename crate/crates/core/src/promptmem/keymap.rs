use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{ParamId, Tape, Tensor, Var};
use crate::params::{ParamRole, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum KeyMapVariant {
    /// One affine layer.
    #[default]
    #[serde(rename = "FC1")]
    Fc1,
    /// Affine, ReLU, affine.
    #[serde(rename = "FC2")]
    Fc2,
    /// `FC2(x) + x`.
    #[serde(rename = "RES2")]
    Res2,
}

/// Image-feature to retrieval-key network `k_x = g(f(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyMap {
    pub variant: KeyMapVariant,
    /// `[w, b]` for FC1, `[w1, b1, w2, b2]` otherwise.
    pub params: Vec<ParamId>,
}

pub const KEYMAP_PREFIX: &str = "theta.";

fn layer_names(variant: KeyMapVariant) -> &'static [&'static str] {
    match variant {
        KeyMapVariant::Fc1 => &["w", "b"],
        KeyMapVariant::Fc2 | KeyMapVariant::Res2 => &["w1", "b1", "w2", "b2"],
    }
}

impl KeyMap {
    /// Weights and biases uniform in `±1/sqrt(dim)`.
    pub fn init<R: Rng>(variant: KeyMapVariant, store: &mut ParamStore, dim: usize, rng: &mut R) -> Result<Self> {
        let bound = 1.0 / (dim as f64).sqrt();
        let mut params = Vec::new();
        for name in layer_names(variant) {
            let shape: &[usize] = if name.starts_with('w') { &[dim, dim] } else { &[dim] };
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
            let t = Tensor::new(shape.to_vec(), data)?;
            params.push(store.add(format!("{KEYMAP_PREFIX}{name}"), ParamRole::KeyMap, t)?);
        }
        Ok(Self { variant, params })
    }

    /// Look up an existing key-map in a restored store.
    pub fn restore(variant: KeyMapVariant, store: &ParamStore) -> Result<Self> {
        let params = layer_names(variant)
            .iter()
            .map(|n| {
                store.find(&format!("{KEYMAP_PREFIX}{n}")).ok_or_else(|| {
                    Error::format(0, format!("checkpoint lacks key-map tensor `{KEYMAP_PREFIX}{n}`"))
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { variant, params })
    }

    pub fn compute_key(&self, store: &ParamStore, feature: &[f64]) -> Result<Tensor> {
        let p = |i: usize| store.get(self.params[i]);
        let dim = p(0).dims2()?.1;
        if feature.len() != dim {
            return Err(Error::Contract(format!(
                "key-map expects dim {dim}, feature has {}",
                feature.len()
            )));
        }
        let first = p(0).matvec(feature)?.add(p(1))?;
        match self.variant {
            KeyMapVariant::Fc1 => Ok(first),
            KeyMapVariant::Fc2 | KeyMapVariant::Res2 => {
                let h = first.map(|x| x.max(0.0));
                let out = p(2).matvec(h.data())?.add(p(3))?;
                if self.variant == KeyMapVariant::Res2 {
                    out.add(&Tensor::vector(feature.to_vec())?)
                } else {
                    Ok(out)
                }
            }
        }
    }

    pub fn compute_key_tape(&self, tape: &mut Tape, store: &ParamStore, feature: Var) -> Result<Var> {
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|&id| tape.param(id, store.get(id)))
            .collect();
        let first = tape.matvec(vars[0], feature)?;
        let first = tape.add(first, vars[1])?;
        match self.variant {
            KeyMapVariant::Fc1 => Ok(first),
            KeyMapVariant::Fc2 | KeyMapVariant::Res2 => {
                let h = tape.relu(first);
                let out = tape.matvec(vars[2], h)?;
                let out = tape.add(out, vars[3])?;
                if self.variant == KeyMapVariant::Res2 {
                    tape.add(out, feature)
                } else {
                    Ok(out)
                }
            }
        }
    }
}
