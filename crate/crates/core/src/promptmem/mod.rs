//! Class-wise token embeddings, the key-prompt memory, the key-map network,
//! two-dimensional top-K retrieval and bias synthesis.

pub mod bank;
pub mod bias;
pub mod keymap;
pub mod pairs;
pub mod topk;

pub use bank::{class_prompt, ClassEntry, ClassTokenBank, EmbeddingInit};
pub use bias::{bias_from_memory, bias_tape, make_bias, prompt_weights};
pub use keymap::{KeyMap, KeyMapVariant};
pub use pairs::{KeyPromptMemory, KeyPromptPair, PairInit};
pub use topk::{quotient_remainder, topk_2d, TopKEntry, TopKSelection};

use crate::error::Result;
use crate::numkernel::cosine_sim;
use crate::params::ParamStore;

/// Cosine similarity of `key` against every stored key, per session.
pub fn similarity_table(key: &[f64], memory: &KeyPromptMemory, store: &ParamStore) -> Result<Vec<Vec<f64>>> {
    memory
        .sessions()
        .iter()
        .map(|pairs| {
            pairs
                .iter()
                .map(|p| cosine_sim(key, store.get(p.key).data()))
                .collect()
        })
        .collect()
}
