//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of a forward pass. Parameters enter
//! through [`Tape::param`] and are deduplicated by [`ParamId`], so a parameter
//! used many times in one program still owns a single gradient accumulator.
//! Constants enter through [`Tape::constant`] and never receive gradients.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::ops::{self, PROB_FLOOR};
use super::tensor::{dot, norm, Tensor};

/// Opaque handle of a learnable tensor in some external parameter store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Handle of a node recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sum(Vec<usize>),
    ScaleConst(usize, f64),
    MulScalar { tensor: usize, scalar: usize },
    MatVec { mat: usize, vec: usize },
    Tanh(usize),
    Relu(usize),
    MeanRows(usize),
    Cosine(usize, usize),
    Stack(Vec<usize>),
    Softmax(usize),
    Index(usize, usize),
    NegLog(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, usize>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf for parameter `id`; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId, value: &Tensor) -> Var {
        if let Some(&idx) = self.params.get(&id) {
            return Var(idx);
        }
        let v = self.push(value.clone(), Op::Leaf);
        self.params.insert(id, v.0);
        v
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.keys().copied()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a.0, b.0)))
    }

    pub fn sum(&mut self, terms: &[Var]) -> Result<Var> {
        let (first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::Contract("sum of zero terms".into()))?;
        let mut value = self.value(*first).clone();
        for t in rest {
            value.add_assign_scaled(self.value(*t), 1.0)?;
        }
        Ok(self.push(value, Op::Sum(terms.iter().map(|v| v.0).collect())))
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        let value = self.value(a).scale(alpha);
        self.push(value, Op::ScaleConst(a.0, alpha))
    }

    /// Multiply a tensor by a scalar node.
    pub fn mul_scalar(&mut self, tensor: Var, scalar: Var) -> Result<Var> {
        if !self.value(scalar).is_scalar() {
            return Err(Error::Contract("mul_scalar: second operand is not a scalar".into()));
        }
        let s = self.scalar(scalar);
        let value = self.value(tensor).scale(s);
        Ok(self.push(
            value,
            Op::MulScalar {
                tensor: tensor.0,
                scalar: scalar.0,
            },
        ))
    }

    pub fn matvec(&mut self, mat: Var, vec: Var) -> Result<Var> {
        let value = self.value(mat).matvec(self.value(vec).data())?;
        Ok(self.push(
            value,
            Op::MatVec {
                mat: mat.0,
                vec: vec.0,
            },
        ))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a.0))
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).mean_rows()?;
        Ok(self.push(value, Op::MeanRows(a.0)))
    }

    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let c = ops::cosine_sim(self.value(a).data(), self.value(b).data())?;
        Ok(self.push(Tensor::scalar(c), Op::Cosine(a.0, b.0)))
    }

    /// Collect scalar nodes into one vector.
    pub fn stack(&mut self, scalars: &[Var]) -> Result<Var> {
        if scalars.iter().any(|s| !self.value(*s).is_scalar()) {
            return Err(Error::Contract("stack expects scalar nodes".into()));
        }
        let data = scalars.iter().map(|s| self.scalar(*s)).collect();
        let value = Tensor::vector(data)?;
        Ok(self.push(value, Op::Stack(scalars.iter().map(|v| v.0).collect())))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::vector(ops::softmax(self.value(a).data())?)?;
        Ok(self.push(value, Op::Softmax(a.0)))
    }

    pub fn index(&mut self, a: Var, i: usize) -> Result<Var> {
        let len = self.value(a).len();
        let x = *self
            .value(a)
            .data()
            .get(i)
            .ok_or(Error::Index { index: i, len })?;
        Ok(self.push(Tensor::scalar(x), Op::Index(a.0, i)))
    }

    /// `-ln(max(p, PROB_FLOOR))` of a scalar probability.
    pub fn neg_log(&mut self, p: Var) -> Result<Var> {
        if !self.value(p).is_scalar() {
            return Err(Error::Contract("neg_log expects a scalar".into()));
        }
        let x = self.scalar(p);
        if x < PROB_FLOOR {
            log::warn!("cross_entropy: probability {x:e} clamped to {PROB_FLOOR:e}");
        }
        Ok(self.push(Tensor::scalar(-x.max(PROB_FLOOR).ln()), Op::NegLog(p.0)))
    }

    /// Back-propagate from a scalar `output` and return one gradient per
    /// parameter leaf on this tape.
    pub fn backward(&self, output: Var) -> Result<BTreeMap<ParamId, Tensor>> {
        if !self.value(output).is_scalar() {
            return Err(Error::Contract(format!(
                "gradient requested for non-scalar output of shape {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g)?;
                    accumulate(&mut grads, *b, &g)?;
                }
                Op::Sum(terms) => {
                    for t in terms {
                        accumulate(&mut grads, *t, &g)?;
                    }
                }
                Op::ScaleConst(a, alpha) => {
                    accumulate(&mut grads, *a, &g.scale(*alpha))?;
                }
                Op::MulScalar { tensor, scalar } => {
                    let s = self.nodes[*scalar].value.data()[0];
                    accumulate(&mut grads, *tensor, &g.scale(s))?;
                    let ds = dot(g.data(), self.nodes[*tensor].value.data());
                    accumulate(&mut grads, *scalar, &Tensor::scalar(ds))?;
                }
                Op::MatVec { mat, vec } => {
                    let w = &self.nodes[*mat].value;
                    let x = self.nodes[*vec].value.data();
                    let (m, n) = w.dims2()?;
                    let gy = g.data();
                    let mut dw = vec![0.0; m * n];
                    let mut dx = vec![0.0; n];
                    for i in 0..m {
                        let row = w.row(i);
                        for j in 0..n {
                            dw[i * n + j] = gy[i] * x[j];
                            dx[j] += row[j] * gy[i];
                        }
                    }
                    accumulate(&mut grads, *mat, &Tensor::new(vec![m, n], dw)?)?;
                    let dx = Tensor::new(self.nodes[*vec].value.shape().to_vec(), dx)?;
                    accumulate(&mut grads, *vec, &dx)?;
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    let d: Vec<f64> = g.data().iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                    accumulate(&mut grads, *a, &Tensor::new(node.value.shape().to_vec(), d)?)?;
                }
                Op::Relu(a) => {
                    let x = self.nodes[*a].value.data();
                    let d: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(x)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, &Tensor::new(node.value.shape().to_vec(), d)?)?;
                }
                Op::MeanRows(a) => {
                    let (rows, cols) = self.nodes[*a].value.dims2()?;
                    let inv = 1.0 / rows as f64;
                    let mut d = Vec::with_capacity(rows * cols);
                    for _ in 0..rows {
                        d.extend(g.data().iter().map(|v| v * inv));
                    }
                    accumulate(&mut grads, *a, &Tensor::new(vec![rows, cols], d)?)?;
                }
                Op::Cosine(a, b) => {
                    let gs = g.data()[0];
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let (da, db) = cosine_grads(av.data(), bv.data());
                    let da = Tensor::new(av.shape().to_vec(), da.iter().map(|v| v * gs).collect())?;
                    let db = Tensor::new(bv.shape().to_vec(), db.iter().map(|v| v * gs).collect())?;
                    accumulate(&mut grads, *a, &da)?;
                    accumulate(&mut grads, *b, &db)?;
                }
                Op::Stack(parts) => {
                    for (k, p) in parts.iter().enumerate() {
                        accumulate(&mut grads, *p, &Tensor::scalar(g.data()[k]))?;
                    }
                }
                Op::Softmax(a) => {
                    let s = node.value.data();
                    let gs = dot(g.data(), s);
                    let d: Vec<f64> = s.iter().zip(g.data()).map(|(s, g)| s * (g - gs)).collect();
                    accumulate(&mut grads, *a, &Tensor::new(node.value.shape().to_vec(), d)?)?;
                }
                Op::Index(a, i) => {
                    let src = &self.nodes[*a].value;
                    let mut d = Tensor::zeros(src.shape());
                    d.data_mut()[*i] = g.data()[0];
                    accumulate(&mut grads, *a, &d)?;
                }
                Op::NegLog(a) => {
                    let p = self.nodes[*a].value.data()[0];
                    let d = if p < PROB_FLOOR { 0.0 } else { -g.data()[0] / p };
                    accumulate(&mut grads, *a, &Tensor::scalar(d))?;
                }
            }
        }

        let mut out = BTreeMap::new();
        for (&id, &idx) in &self.params {
            let g = grads
                .get_mut(idx)
                .and_then(Option::take)
                .unwrap_or_else(|| Tensor::zeros(self.nodes[idx].value.shape()));
            if g.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("backward"));
            }
            out.insert(id, g);
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, g: &Tensor) -> Result<()> {
    match &mut grads[idx] {
        Some(acc) => acc.add_assign_scaled(g, 1.0),
        slot @ None => {
            *slot = Some(g.clone());
            Ok(())
        }
    }
}

fn cosine_grads(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let na = norm(a);
    let nb = norm(b);
    let c = dot(a, b) / (na * nb);
    let inv = 1.0 / (na * nb);
    let da = a
        .iter()
        .zip(b)
        .map(|(x, y)| y * inv - c * x / (na * na))
        .collect();
    let db = a
        .iter()
        .zip(b)
        .map(|(x, y)| x * inv - c * y / (nb * nb))
        .collect();
    (da, db)
}

/// Evaluate a scalar program and its gradients w.r.t. `params`.
///
/// The program receives a fresh tape and must route every parameter through
/// [`Tape::param`] with the matching index. The result carries `Some` for
/// each index marked learnable (zeros when the program never touched it) and
/// `None` for frozen ones.
pub fn eval_with_gradients<F>(
    params: &[Tensor],
    learnable: &[bool],
    program: F,
) -> Result<(f64, Vec<Option<Tensor>>)>
where
    F: FnOnce(&mut Tape) -> Result<Var>,
{
    if params.len() != learnable.len() {
        return Err(Error::Contract(
            "learnable mask must have one entry per parameter".into(),
        ));
    }
    let mut tape = Tape::new();
    let out = program(&mut tape)?;
    let loss = tape.value(out);
    if !loss.is_scalar() {
        return Err(Error::Contract(format!(
            "program output has shape {:?}, expected a scalar",
            loss.shape()
        )));
    }
    let loss = loss.data()[0];
    let mut by_id = tape.backward(out)?;
    let grads = params
        .iter()
        .zip(learnable)
        .enumerate()
        .map(|(i, (p, &learn))| {
            learn.then(|| {
                by_id
                    .remove(&ParamId(i))
                    .unwrap_or_else(|| Tensor::zeros(p.shape()))
            })
        })
        .collect();
    Ok((loss, grads))
}
