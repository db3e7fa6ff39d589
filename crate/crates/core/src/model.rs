use rand::Rng;

use crate::encoders::{TextEncoder, Tokenizer};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::promptmem::{ClassTokenBank, EmbeddingInit, KeyMap, KeyMapVariant, KeyPromptMemory, PairInit};

/// Everything the classifier needs: frozen encoder, learnable parameters,
/// and the bookkeeping that maps classes and pairs onto the store.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: TextEncoder,
    pub tokenizer: Tokenizer,
    pub keymap: KeyMap,
    pub bank: ClassTokenBank,
    pub memory: KeyPromptMemory,
    pub store: ParamStore,
}

impl Model {
    /// Fresh model: encoder and tokenizer derive from `seed`, the key-map
    /// draws from `rng`.
    pub fn new<R: Rng>(seed: u64, l_ctx: usize, dim: usize, variant: KeyMapVariant, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let keymap = KeyMap::init(variant, &mut store, dim, rng)?;
        Ok(Self {
            encoder: TextEncoder::new(seed, l_ctx, dim)?,
            tokenizer: Tokenizer::new(seed, l_ctx, dim),
            keymap,
            bank: ClassTokenBank::new(),
            memory: KeyPromptMemory::new(),
            store,
        })
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn l_ctx(&self) -> usize {
        self.encoder.l_ctx()
    }

    pub fn num_sessions(&self) -> usize {
        self.bank.num_sessions()
    }

    pub fn num_classes(&self) -> usize {
        self.bank.total_classes()
    }

    /// Initialize class embeddings and key-prompt pairs of the next session.
    pub fn add_session<R: Rng>(
        &mut self,
        classes: &[(u32, String)],
        token_init: Option<&crate::datasets::TokenFile>,
        n_pairs: usize,
        pair_init: PairInit,
        rng: &mut R,
    ) -> Result<usize> {
        if self.bank.num_sessions() != self.memory.num_sessions() {
            return Err(Error::Contract("bank and memory session counts diverged".into()));
        }
        let init = match token_init {
            Some(file) => EmbeddingInit::Exported(file),
            None => EmbeddingInit::Hashed(&self.tokenizer),
        };
        let (l_ctx, dim) = (self.l_ctx(), self.dim());
        let t = self
            .bank
            .init_class_embeddings(&mut self.store, classes, init, l_ctx, dim)?;
        self.memory
            .init_key_prompt_pairs(&mut self.store, &self.bank, &self.encoder, n_pairs, pair_init, rng)?;
        Ok(t)
    }
}
