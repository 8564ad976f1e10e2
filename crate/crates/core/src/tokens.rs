//! Discrete token sequences shared by the tokenizer, priors and channel.

use crate::error::{Error, Result};

/// A length-`d_s` sequence of codebook indices in `{0..vocab-1}`.
///
/// The mask token `A = vocab` never appears here; erased sequences carry it
/// in [`crate::channel::ErasedSequence`] instead.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<u32>,
    vocab: u32,
}

impl TokenSequence {
    pub fn new(tokens: Vec<u32>, vocab: u32) -> Result<Self> {
        if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab) {
            return Err(Error::InvalidToken(format!(
                "token {bad} out of range for vocabulary of {vocab}"
            )));
        }
        Ok(TokenSequence { tokens, vocab })
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn vocab(&self) -> u32 {
        self.vocab
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// The mask token for this vocabulary (`A = N`), used by the channel and
    /// the diffusion prior.
    pub fn mask_token(&self) -> u32 {
        self.vocab
    }
}
