use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numkernel::Tensor;

/// Padded `l_ctx x dim` token matrix plus the count of rows holding tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbedding {
    pub matrix: Tensor,
    pub valid_len: usize,
}

impl TokenEmbedding {
    pub fn new(matrix: Tensor, valid_len: usize) -> Result<Self> {
        let (rows, _) = matrix.dims2()?;
        if valid_len == 0 || valid_len > rows {
            return Err(Error::Contract(format!(
                "valid_len {valid_len} outside 1..={rows}"
            )));
        }
        Ok(Self { matrix, valid_len })
    }

    pub fn l_ctx(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

/// Whitespace tokenizer with a hashed, seeded embedding table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tokenizer {
    pub seed: u64,
    pub l_ctx: usize,
    pub dim: usize,
}

impl Tokenizer {
    pub fn new(seed: u64, l_ctx: usize, dim: usize) -> Self {
        Self { seed, l_ctx, dim }
    }

    pub fn tokens(text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_lowercase).collect()
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&fnv1a64(token.as_bytes()).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        let scale = 1.0 / (self.dim as f64).sqrt();
        (0..self.dim)
            .map(|_| rng.gen_range(-1.0..1.0) * scale)
            .collect()
    }

    /// `h(text)`: one row per token, zero rows after the last token.
    pub fn embed(&self, text: &str) -> Result<TokenEmbedding> {
        let tokens = Self::tokens(text);
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("cannot embed empty text".into()));
        }
        if tokens.len() > self.l_ctx {
            return Err(Error::Capacity(format!(
                "{:?} has {} tokens, context holds {}",
                text.trim(),
                tokens.len(),
                self.l_ctx
            )));
        }
        let mut data = vec![0.0; self.l_ctx * self.dim];
        for (r, tok) in tokens.iter().enumerate() {
            data[r * self.dim..(r + 1) * self.dim].copy_from_slice(&self.token_vector(tok));
        }
        TokenEmbedding::new(Tensor::matrix(self.l_ctx, self.dim, data)?, tokens.len())
    }
}
