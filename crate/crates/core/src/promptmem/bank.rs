use crate::datasets::TokenFile;
use crate::encoders::{TokenEmbedding, Tokenizer};
use crate::error::{Error, Result};
use crate::numkernel::{ParamId, Tensor};
use crate::params::{class_param_name, ParamRole, ParamStore};

pub fn class_prompt(name: &str) -> String {
    format!("a photo of a {name}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassEntry {
    pub class_id: u32,
    pub name: String,
    pub param: ParamId,
    pub valid_len: usize,
}

/// Where initial class token embeddings come from.
#[derive(Debug, Clone, Copy)]
pub enum EmbeddingInit<'a> {
    Hashed(&'a Tokenizer),
    /// Rows exported from a real checkpoint, keyed by class id.
    Exported(&'a TokenFile),
}

/// Class-wise token embeddings, grouped by session.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassTokenBank {
    sessions: Vec<Vec<ClassEntry>>,
}

impl ClassTokenBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_sessions(&self) -> usize {
        self.sessions.len()
    }

    pub fn session(&self, t: usize) -> &[ClassEntry] {
        &self.sessions[t]
    }

    pub fn sessions(&self) -> &[Vec<ClassEntry>] {
        &self.sessions
    }

    pub fn session_sizes(&self) -> Vec<usize> {
        self.sessions.iter().map(Vec::len).collect()
    }

    pub fn total_classes(&self) -> usize {
        self.sessions.iter().map(Vec::len).sum()
    }

    /// Classes in seen order: session ascending, class index ascending.
    pub fn iter_seen(&self) -> impl Iterator<Item = (usize, &ClassEntry)> {
        self.sessions
            .iter()
            .enumerate()
            .flat_map(|(t, s)| s.iter().map(move |c| (t, c)))
    }

    /// Position of `class_id` in seen order.
    pub fn global_index(&self, class_id: u32) -> Option<usize> {
        self.iter_seen().position(|(_, c)| c.class_id == class_id)
    }

    pub fn session_of(&self, class_id: u32) -> Option<usize> {
        self.iter_seen()
            .find(|(_, c)| c.class_id == class_id)
            .map(|(t, _)| t)
    }

    /// Restore an entry during checkpoint loading.
    pub(crate) fn push_restored(&mut self, session: usize, entry: ClassEntry) {
        while self.sessions.len() <= session {
            self.sessions.push(Vec::new());
        }
        self.sessions[session].push(entry);
    }

    /// `E^t_i = h("a photo of a {name}")` for each class of a new session.
    pub fn init_class_embeddings(
        &mut self,
        store: &mut ParamStore,
        classes: &[(u32, String)],
        init: EmbeddingInit<'_>,
        l_ctx: usize,
        dim: usize,
    ) -> Result<usize> {
        if classes.is_empty() {
            return Err(Error::Setup("a session needs at least one class".into()));
        }
        for (i, (id, name)) in classes.iter().enumerate() {
            if name.trim().is_empty() {
                return Err(Error::Setup(format!("class {id} has an empty name")));
            }
            let clash_in_new = classes[..i].iter().any(|(j, n)| j == id || n == name);
            let clash_in_old = self.iter_seen().any(|(_, c)| c.class_id == *id || c.name == *name);
            if clash_in_new || clash_in_old {
                return Err(Error::Setup(format!(
                    "class {id} ({name}) already belongs to a session; sessions must not overlap"
                )));
            }
        }
        let session = self.sessions.len();
        let mut entries = Vec::with_capacity(classes.len());
        for (i, (id, name)) in classes.iter().enumerate() {
            let emb = match init {
                EmbeddingInit::Hashed(tok) => tok.embed(&class_prompt(name))?,
                EmbeddingInit::Exported(file) => exported_embedding(file, *id, l_ctx, dim)?,
            };
            let param = store.add(
                class_param_name(session, i),
                ParamRole::ClassEmbedding { session, class: i },
                emb.matrix,
            )?;
            entries.push(ClassEntry {
                class_id: *id,
                name: name.clone(),
                param,
                valid_len: emb.valid_len,
            });
        }
        self.sessions.push(entries);
        Ok(session)
    }
}

fn exported_embedding(file: &TokenFile, class_id: u32, l_ctx: usize, dim: usize) -> Result<TokenEmbedding> {
    if file.l_ctx as usize != l_ctx || file.dim as usize != dim {
        return Err(Error::Setup(format!(
            "token file is {}x{}, engine expects {l_ctx}x{dim}",
            file.l_ctx, file.dim
        )));
    }
    let rec = file
        .get(class_id)
        .ok_or_else(|| Error::Setup(format!("token file has no entry for class {class_id}")))?;
    let data = rec.rows.iter().map(|&v| v as f64).collect();
    TokenEmbedding::new(Tensor::matrix(l_ctx, dim, data)?, rec.valid_len as usize)
}
