use crate::encoders::TokenEmbedding;
use crate::error::{Error, Result};
use crate::numkernel::{softmax, Tape, Tensor, Var};
use crate::params::ParamStore;

use super::pairs::KeyPromptMemory;
use super::topk::TopKSelection;

/// Softmax over the selected similarities.
pub fn prompt_weights(selection: &TopKSelection) -> Result<Vec<f64>> {
    if selection.is_empty() {
        return Err(Error::InvalidArgument("empty top-K selection".into()));
    }
    softmax(&selection.sims())
}

/// `b_x = Σ_j w_j · Pr_j` over the selected prompts.
pub fn make_bias(selection: &TopKSelection, weights: &[f64], prompts: &[&Tensor]) -> Result<TokenEmbedding> {
    if weights.len() != selection.len() || prompts.len() != selection.len() {
        return Err(Error::Contract(format!(
            "bias: {} selected, {} weights, {} prompts",
            selection.len(),
            weights.len(),
            prompts.len()
        )));
    }
    let mut acc = Tensor::zeros(prompts[0].shape());
    for (w, p) in weights.iter().zip(prompts) {
        acc.add_assign_scaled(p, *w)?;
    }
    let rows = acc.dims2()?.0;
    TokenEmbedding::new(acc, rows)
}

/// Plain-path bias for a selection drawn from `memory`.
pub fn bias_from_memory(selection: &TopKSelection, memory: &KeyPromptMemory, store: &ParamStore) -> Result<TokenEmbedding> {
    let weights = prompt_weights(selection)?;
    let prompts: Vec<&Tensor> = selection
        .entries
        .iter()
        .map(|e| store.get(memory.get(e.session, e.index).prompt))
        .collect();
    make_bias(selection, &weights, &prompts)
}

/// Differentiable bias: the selection is fixed, similarities of the
/// selected keys are recomputed on the tape.
pub fn bias_tape(
    tape: &mut Tape,
    key: Var,
    selection: &TopKSelection,
    memory: &KeyPromptMemory,
    store: &ParamStore,
) -> Result<Var> {
    if selection.is_empty() {
        return Err(Error::InvalidArgument("empty top-K selection".into()));
    }
    let mut sims = Vec::with_capacity(selection.len());
    let mut prompts = Vec::with_capacity(selection.len());
    for e in &selection.entries {
        let pair = memory.get(e.session, e.index);
        let k = tape.param(pair.key, store.get(pair.key));
        sims.push(tape.cosine(key, k)?);
        prompts.push(tape.param(pair.prompt, store.get(pair.prompt)));
    }
    let logits = tape.stack(&sims)?;
    let weights = tape.softmax(logits)?;
    let mut terms = Vec::with_capacity(prompts.len());
    for (j, p) in prompts.into_iter().enumerate() {
        let w = tape.index(weights, j)?;
        terms.push(tape.mul_scalar(p, w)?);
    }
    tape.sum(&terms)
}
