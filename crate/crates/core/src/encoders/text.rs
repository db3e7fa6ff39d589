use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numkernel::{Tape, Tensor, Var};

use super::tokenizer::TokenEmbedding;

/// Frozen two-layer text encoder: `W2 · tanh(W1 · mean_rows(E) + b1) + b2`.
///
/// The pooled mean runs over every context row, padding included, so a
/// bias added to the whole padded matrix shifts the encoding uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    l_ctx: usize,
    dim: usize,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

/// Encoder weights recorded as constants on one tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundEncoder {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

impl TextEncoder {
    pub fn new(seed: u64, l_ctx: usize, dim: usize) -> Result<Self> {
        if l_ctx == 0 || dim == 0 {
            return Err(Error::InvalidArgument("l_ctx and dim must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let bound = 1.0 / (dim as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
        };
        Ok(Self {
            l_ctx,
            dim,
            w1: Tensor::matrix(dim, dim, draw(dim * dim))?,
            b1: Tensor::vector(draw(dim))?,
            w2: Tensor::matrix(dim, dim, draw(dim * dim))?,
            b2: Tensor::vector(draw(dim))?,
        })
    }

    pub fn l_ctx(&self) -> usize {
        self.l_ctx
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check_shape(&self, shape: &[usize]) -> Result<()> {
        if shape != [self.l_ctx, self.dim] {
            return Err(Error::Contract(format!(
                "text encoder expects [{}, {}], got {shape:?}",
                self.l_ctx, self.dim
            )));
        }
        Ok(())
    }

    /// `f_T` on a plain matrix.
    pub fn encode_matrix(&self, e: &Tensor) -> Result<Tensor> {
        self.check_shape(e.shape())?;
        let pooled = e.mean_rows()?;
        let h = self.w1.matvec(pooled.data())?.add(&self.b1)?.map(f64::tanh);
        self.w2.matvec(h.data())?.add(&self.b2)
    }

    pub fn text_encode(&self, e: &TokenEmbedding) -> Result<Tensor> {
        self.encode_matrix(&e.matrix)
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundEncoder {
        BoundEncoder {
            w1: tape.constant(self.w1.clone()),
            b1: tape.constant(self.b1.clone()),
            w2: tape.constant(self.w2.clone()),
            b2: tape.constant(self.b2.clone()),
        }
    }

    /// SHA-256 over every weight, for freeze checks.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for t in [&self.w1, &self.b1, &self.w2, &self.b2] {
            h.update(t.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

impl BoundEncoder {
    pub fn encode(&self, tape: &mut Tape, e: Var) -> Result<Var> {
        let pooled = tape.mean_rows(e)?;
        let h = tape.matvec(self.w1, pooled)?;
        let h = tape.add(h, self.b1)?;
        let h = tape.tanh(h);
        let out = tape.matvec(self.w2, h)?;
        tape.add(out, self.b2)
    }
}
