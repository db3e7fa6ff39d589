use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::TextEncoder;
use crate::error::{Error, Result};
use crate::numkernel::{ParamId, Tensor};
use crate::params::{key_param_name, prompt_param_name, ParamRole, ParamStore};

use super::bank::ClassTokenBank;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyPromptPair {
    pub key: ParamId,
    pub prompt: ParamId,
    pub owner_session: usize,
    pub index_in_session: usize,
}

/// How new key-prompt pairs are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairInit {
    /// Copy a class embedding of the session and encode it for the key.
    #[default]
    ClassEmbedding,
    /// Uniform noise, same scale as token embeddings.
    Random,
}

/// Key-prompt pairs grouped by owning session.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyPromptMemory {
    sessions: Vec<Vec<KeyPromptPair>>,
}

impl KeyPromptMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_sessions(&self) -> usize {
        self.sessions.len()
    }

    pub fn sessions(&self) -> &[Vec<KeyPromptPair>] {
        &self.sessions
    }

    pub fn session(&self, t: usize) -> &[KeyPromptPair] {
        &self.sessions[t]
    }

    pub fn pool_size(&self) -> usize {
        self.sessions.iter().map(Vec::len).sum()
    }

    pub fn get(&self, session: usize, index: usize) -> &KeyPromptPair {
        &self.sessions[session][index]
    }

    pub(crate) fn push_restored(&mut self, pair: KeyPromptPair) {
        while self.sessions.len() <= pair.owner_session {
            self.sessions.push(Vec::new());
        }
        self.sessions[pair.owner_session].push(pair);
    }

    /// Pick `n` class indices out of `m`: a permutation prefix while classes
    /// last, then uniform draws with replacement.
    pub fn choose_classes<R: Rng>(n: usize, m: usize, rng: &mut R) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(rng);
        let mut out: Vec<usize> = perm.into_iter().take(n).collect();
        while out.len() < n {
            out.push(rng.gen_range(0..m));
        }
        out
    }

    /// Add `n` pairs for the newest bank session.
    ///
    /// With [`PairInit::ClassEmbedding`] pair `i` starts as
    /// `k = f_T(E_j)`, `Pr = E_j` for a drawn class `j`; both become
    /// independent parameters afterwards.
    pub fn init_key_prompt_pairs<R: Rng>(
        &mut self,
        store: &mut ParamStore,
        bank: &ClassTokenBank,
        encoder: &TextEncoder,
        n: usize,
        init: PairInit,
        rng: &mut R,
    ) -> Result<usize> {
        let session = self.sessions.len();
        if bank.num_sessions() != session + 1 {
            return Err(Error::Setup(format!(
                "class bank has {} sessions, memory expects {}",
                bank.num_sessions(),
                session + 1
            )));
        }
        let classes = bank.session(session);
        if classes.is_empty() {
            return Err(Error::Setup("empty class bank for key-prompt init".into()));
        }
        if n == 0 {
            return Err(Error::Setup("a session needs at least one key-prompt pair".into()));
        }
        let (l_ctx, dim) = (encoder.l_ctx(), encoder.dim());
        let mut pairs = Vec::with_capacity(n);
        let picks = match init {
            PairInit::ClassEmbedding => Self::choose_classes(n, classes.len(), rng),
            PairInit::Random => Vec::new(),
        };
        for i in 0..n {
            let (key, prompt) = match init {
                PairInit::ClassEmbedding => {
                    let e = store.get(classes[picks[i]].param).clone();
                    (encoder.encode_matrix(&e)?, e)
                }
                PairInit::Random => {
                    let scale = 1.0 / (dim as f64).sqrt();
                    let mut draw = |k: usize| -> Vec<f64> {
                        (0..k).map(|_| rng.gen_range(-1.0..1.0) * scale).collect()
                    };
                    let key = Tensor::vector(draw(dim))?;
                    let prompt = Tensor::matrix(l_ctx, dim, draw(l_ctx * dim))?;
                    (key, prompt)
                }
            };
            if key.norm() == 0.0 {
                return Err(Error::Domain("initialized key has zero norm".into()));
            }
            let key = store.add(key_param_name(session, i), ParamRole::Key { session, index: i }, key)?;
            let prompt = store.add(
                prompt_param_name(session, i),
                ParamRole::Prompt { session, index: i },
                prompt,
            )?;
            pairs.push(KeyPromptPair {
                key,
                prompt,
                owner_session: session,
                index_in_session: i,
            });
        }
        self.sessions.push(pairs);
        Ok(session)
    }
}
