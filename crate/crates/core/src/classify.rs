//! Per-image textual classifiers, all-seen-class probabilities and the loss.
//!
//! Two forward paths exist: a plain one used for evaluation (no tape) and a
//! taped one used for training. Both see the same numbers; tests hold them
//! to agreement.

use crate::encoders::{BoundEncoder, TextEncoder, TokenEmbedding};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numkernel::{argmax, cosine_sim, cross_entropy, softmax, Tape, Tensor, Var};
use crate::params::ParamStore;
use crate::promptmem::{bias_from_memory, bias_tape, similarity_table, topk_2d, ClassTokenBank, TopKSelection};

/// Classifier vectors `g` per session, one row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierSet {
    pub per_session: Vec<Vec<Tensor>>,
}

impl ClassifierSet {
    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.per_session.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.per_session.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Probabilities over every seen class in seen order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(pub Vec<f64>);

impl ProbVector {
    pub fn argmax(&self) -> usize {
        argmax(&self.0).unwrap_or(0)
    }
}

/// `g = f_T(bias + E)` for every class in the bank.
pub fn gen_classifiers(
    bias: &TokenEmbedding,
    bank: &ClassTokenBank,
    store: &ParamStore,
    encoder: &TextEncoder,
) -> Result<ClassifierSet> {
    if bank.total_classes() == 0 {
        return Err(Error::Setup("no classes to build classifiers for".into()));
    }
    let per_session = bank
        .sessions()
        .iter()
        .map(|classes| {
            classes
                .iter()
                .map(|c| encoder.encode_matrix(&bias.matrix.add(store.get(c.param))?))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(ClassifierSet { per_session })
}

/// Softmax of `tau · cos(feature, g)` across all classifiers.
pub fn class_logits(feature: &[f64], classifiers: &ClassifierSet, tau: f64) -> Result<ProbVector> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    let sims = classifiers
        .iter()
        .map(|g| Ok(tau * cosine_sim(feature, g.data())?))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbVector(softmax(&sims)?))
}

/// Retrieval for one image: key, then top-K over the whole pool.
pub fn retrieve(model: &Model, feature: &[f64], k_pr: usize) -> Result<(Tensor, TopKSelection)> {
    let key = model.keymap.compute_key(&model.store, feature)?;
    let table = similarity_table(key.data(), &model.memory, &model.store)?;
    let selection = topk_2d(&table, k_pr)?;
    Ok((key, selection))
}

/// Gradient-free probabilities for one image.
pub fn predict(model: &Model, feature: &[f64], k_pr: usize, tau: f64) -> Result<ProbVector> {
    let (_, selection) = retrieve(model, feature, k_pr)?;
    let bias = bias_from_memory(&selection, &model.memory, &model.store)?;
    let classifiers = gen_classifiers(&bias, &model.bank, &model.store, &model.encoder)?;
    class_logits(feature, &classifiers, tau)
}

/// Nodes of one sample's forward pass.
#[derive(Debug, Clone)]
pub struct SampleVars {
    pub probs: Var,
    pub loss: Option<Var>,
    pub selection: TopKSelection,
}

/// Encoder constants bound once per tape.
pub struct ForwardCtx<'m> {
    pub model: &'m Model,
    pub encoder: BoundEncoder,
    pub k_pr: usize,
    pub tau: f64,
}

impl<'m> ForwardCtx<'m> {
    pub fn new(tape: &mut Tape, model: &'m Model, k_pr: usize, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
        }
        Ok(Self {
            model,
            encoder: model.encoder.bind(tape),
            k_pr,
            tau,
        })
    }

    /// Record one image. `target` is the class position in seen order;
    /// `selection` pins the retrieved pairs instead of recomputing them.
    pub fn sample(
        &self,
        tape: &mut Tape,
        feature: &[f64],
        target: Option<usize>,
        selection: Option<&TopKSelection>,
    ) -> Result<SampleVars> {
        let model = self.model;
        let store = &model.store;
        let f = tape.constant(Tensor::vector(feature.to_vec())?);
        let key = model.keymap.compute_key_tape(tape, store, f)?;
        let selection = match selection {
            Some(s) => s.clone(),
            None => {
                let table = similarity_table(tape.value(key).data(), &model.memory, store)?;
                topk_2d(&table, self.k_pr)?
            }
        };
        let bias = bias_tape(tape, key, &selection, &model.memory, store)?;
        let mut logits = Vec::with_capacity(model.num_classes());
        for (_, class) in model.bank.iter_seen() {
            let e = tape.param(class.param, store.get(class.param));
            let shifted = tape.add(bias, e)?;
            let g = self.encoder.encode(tape, shifted)?;
            let c = tape.cosine(f, g)?;
            logits.push(tape.scale(c, self.tau));
        }
        let logits = tape.stack(&logits)?;
        let probs = tape.softmax(logits)?;
        let loss = match target {
            Some(t) => {
                let p = tape.index(probs, t)?;
                Some(tape.neg_log(p)?)
            }
            None => None,
        };
        Ok(SampleVars {
            probs,
            loss,
            selection,
        })
    }

    /// Mean loss over a batch of `(feature, target)`.
    pub fn batch_loss(&self, tape: &mut Tape, batch: &[(&[f64], usize)]) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Setup("empty batch".into()));
        }
        let mut losses = Vec::with_capacity(batch.len());
        for (feature, target) in batch {
            let vars = self.sample(tape, feature, Some(*target), None)?;
            losses.push(vars.loss.expect("target given"));
        }
        let total = tape.sum(&losses)?;
        Ok(tape.scale(total, 1.0 / batch.len() as f64))
    }
}

/// Position of `class_id` in seen order, or a setup error.
pub fn target_index(model: &Model, class_id: u32) -> Result<usize> {
    model
        .bank
        .global_index(class_id)
        .ok_or_else(|| Error::Setup(format!("label {class_id} is not among the seen classes")))
}

/// Cross-entropy of one image against its true class.
pub fn sample_loss(model: &Model, feature: &[f64], class_id: u32, k_pr: usize, tau: f64) -> Result<f64> {
    let target = target_index(model, class_id)?;
    let mut tape = Tape::new();
    let ctx = ForwardCtx::new(&mut tape, model, k_pr, tau)?;
    let vars = ctx.sample(&mut tape, feature, Some(target), None)?;
    Ok(tape.scalar(vars.loss.expect("target given")))
}

/// Same loss computed on the plain path.
pub fn sample_loss_plain(model: &Model, feature: &[f64], class_id: u32, k_pr: usize, tau: f64) -> Result<f64> {
    let target = target_index(model, class_id)?;
    cross_entropy(&predict(model, feature, k_pr, tau)?.0, target)
}
