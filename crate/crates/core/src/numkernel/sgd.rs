use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::tape::ParamId;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.002,
            momentum: 0.9,
            weight_decay: 0.0005,
        }
    }
}

/// Heavy-ball SGD with L2 decay folded into the gradient:
///
/// ```text
/// v <- momentum * v + grad + weight_decay * param
/// param <- param - lr * v
/// ```
///
/// Velocities are created lazily (zero) the first time a parameter is stepped.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub config: SgdConfig,
    velocity: Vec<Option<Tensor>>,
}

impl SgdState {
    pub fn new(config: SgdConfig) -> Self {
        Self {
            config,
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self, id: ParamId) -> Option<&Tensor> {
        self.velocity.get(id.0).and_then(Option::as_ref)
    }

    pub fn set_velocity(&mut self, id: ParamId, v: Tensor) {
        if self.velocity.len() <= id.0 {
            self.velocity.resize(id.0 + 1, None);
        }
        self.velocity[id.0] = Some(v);
    }

    pub fn velocities(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.velocity
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.as_ref().map(|v| (ParamId(i), v)))
    }

    pub fn quantize_f32(&mut self) {
        self.velocity.iter_mut().flatten().for_each(Tensor::quantize_f32);
    }

    pub fn step(&mut self, id: ParamId, param: &mut Tensor, grad: &Tensor) -> Result<()> {
        param.ensure_same_shape(grad)?;
        let SgdConfig {
            lr,
            momentum,
            weight_decay,
        } = self.config;
        if self.velocity.len() <= id.0 {
            self.velocity.resize(id.0 + 1, None);
        }
        let v = self.velocity[id.0].get_or_insert_with(|| Tensor::zeros(param.shape()));
        if v.shape() != param.shape() {
            return Err(Error::Contract(format!(
                "velocity shape {:?} does not match parameter shape {:?}",
                v.shape(),
                param.shape()
            )));
        }
        for ((vi, g), p) in v.data_mut().iter_mut().zip(grad.data()).zip(param.data()) {
            *vi = momentum * *vi + g + weight_decay * p;
        }
        param.add_assign_scaled(v, -lr)?;
        if param.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("sgd_step"));
        }
        Ok(())
    }
}

/// Apply one step to every parameter that has a gradient.
pub fn sgd_step(params: &mut [Tensor], grads: &[Option<Tensor>], state: &mut SgdState) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Contract("one gradient slot per parameter required".into()));
    }
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if let Some(g) = g {
            state.step(ParamId(i), p, g)?;
        }
    }
    Ok(())
}
