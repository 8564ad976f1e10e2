//! Erasure channels over token sequences.
//!
//! The technical channel never corrupts a delivered token; it only erases.
//! Truncation erases a suffix (latency-limited delivery), puncturing erases
//! interior positions (packet loss). Patterns are deterministic so sweeps are
//! exactly reproducible; an i.i.d. Bernoulli pattern exists for robustness
//! studies but is not part of the standard sweeps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tokens::TokenSequence;

/// Channel kind and its deterministic pattern parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErasureSpec {
    /// Deliver the first `round((1-epsilon)*d_s)` tokens, erase the rest.
    Truncate { epsilon: f64 },
    /// Keep one token in every `i+1` (drop `i` after each kept token).
    /// Every-other-token delivery is `burst(1)`.
    PunctureBurst { i: usize },
    /// Alias pattern family: keep-one-in-`(i+1)` periodic puncturing.
    PuncturePeriodic { i: usize },
    /// Independent per-token erasure with probability `epsilon` (off the
    /// standard sweep grids; needs a seed to realize the pattern).
    PunctureIid { epsilon: f64, seed: u64 },
}

impl ErasureSpec {
    /// Nominal erasure rate of the spec.
    pub fn epsilon(&self) -> f64 {
        match self {
            ErasureSpec::Truncate { epsilon } => *epsilon,
            ErasureSpec::PunctureBurst { i } | ErasureSpec::PuncturePeriodic { i } => {
                *i as f64 / (*i as f64 + 1.0)
            }
            ErasureSpec::PunctureIid { epsilon, .. } => *epsilon,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ErasureSpec::Truncate { .. } => "truncate",
            ErasureSpec::PunctureBurst { .. } => "puncture_burst",
            ErasureSpec::PuncturePeriodic { .. } => "puncture_periodic",
            ErasureSpec::PunctureIid { .. } => "puncture_iid",
        }
    }

    /// Short pattern descriptor for reports.
    pub fn param_label(&self) -> String {
        match self {
            ErasureSpec::Truncate { epsilon } => format!("eps={epsilon}"),
            ErasureSpec::PunctureBurst { i } | ErasureSpec::PuncturePeriodic { i } => {
                format!("i={i}")
            }
            ErasureSpec::PunctureIid { epsilon, seed } => format!("eps={epsilon},seed={seed}"),
        }
    }

    /// Realize the received-position pattern for sequence length `d_s`
    /// (true = delivered).
    pub fn pattern(&self, d_s: usize) -> Result<Vec<bool>> {
        match self {
            ErasureSpec::Truncate { epsilon } => {
                if !(0.0..=1.0).contains(epsilon) {
                    return Err(Error::invalid_input(format!("epsilon {epsilon} outside [0,1]")));
                }
                let t_e = truncate_keep_count(*epsilon, d_s);
                Ok((0..d_s).map(|j| j < t_e).collect())
            }
            ErasureSpec::PunctureBurst { i } | ErasureSpec::PuncturePeriodic { i } => {
                Ok((0..d_s).map(|j| j % (i + 1) == 0).collect())
            }
            ErasureSpec::PunctureIid { epsilon, seed } => {
                if !(0.0..=1.0).contains(epsilon) {
                    return Err(Error::invalid_input(format!("epsilon {epsilon} outside [0,1]")));
                }
                let mut rng = stream_rng(*seed, "channel-iid", &[d_s as u64]);
                use rand::Rng as _;
                Ok((0..d_s).map(|_| rng.gen_range(0.0..1.0) >= *epsilon).collect())
            }
        }
    }

    pub fn is_prefix_pattern(&self) -> bool {
        matches!(self, ErasureSpec::Truncate { .. })
    }
}

/// Tokens after the channel: delivered values plus the mask token `A = N` at
/// erased positions, with the delivery pattern kept explicit.
#[derive(Clone, Debug, PartialEq)]
pub struct ErasedSequence {
    tokens: Vec<u32>,
    pattern: Vec<bool>,
    vocab: u32,
}

impl ErasedSequence {
    pub fn new(tokens: Vec<u32>, pattern: Vec<bool>, vocab: u32) -> Result<Self> {
        if tokens.len() != pattern.len() {
            return Err(Error::shape(format!(
                "pattern length {} vs tokens {}",
                pattern.len(),
                tokens.len()
            )));
        }
        for (t, &received) in tokens.iter().zip(&pattern) {
            if received && *t >= vocab {
                return Err(Error::InvalidToken(format!(
                    "received token {t} out of range for vocabulary of {vocab}"
                )));
            }
            if !received && *t != vocab {
                return Err(Error::InvalidToken(format!(
                    "erased position holds {t}, expected the mask token {vocab}"
                )));
            }
        }
        Ok(ErasedSequence {
            tokens,
            pattern,
            vocab,
        })
    }

    /// Tokens over `{0..N-1} ∪ {A}` with `A = vocab`.
    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    /// Delivery flags: `pattern[i]` iff position `i` was received.
    pub fn pattern(&self) -> &[bool] {
        &self.pattern
    }

    pub fn vocab(&self) -> u32 {
        self.vocab
    }

    pub fn mask_token(&self) -> u32 {
        self.vocab
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_received(&self) -> usize {
        self.pattern.iter().filter(|&&b| b).count()
    }

    pub fn n_erased(&self) -> usize {
        self.len() - self.n_received()
    }

    /// Realized erasure fraction.
    pub fn realized_epsilon(&self) -> f64 {
        self.n_erased() as f64 / self.len() as f64
    }

    /// True when the received positions form a prefix (truncation shape).
    pub fn is_prefix(&self) -> bool {
        let t_e = self.n_received();
        self.pattern.iter().take(t_e).all(|&b| b)
    }

    /// Pattern as hex, MSB-first within each byte, for sweep manifests.
    pub fn pattern_hex(&self) -> String {
        pattern_to_hex(&self.pattern)
    }
}

/// Number of delivered tokens under truncation: `round((1-eps)*d_s)`,
/// half-up so the power-of-two grids land exactly.
pub fn truncate_keep_count(epsilon: f64, d_s: usize) -> usize {
    let exact = (1.0 - epsilon) * d_s as f64;
    ((exact + 0.5).floor() as usize).min(d_s)
}

/// Apply a truncating channel: the first `round((1-eps)*d_s)` tokens arrive.
pub fn apply_truncation(z: &TokenSequence, epsilon: f64) -> Result<ErasedSequence> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid_input(format!("epsilon {epsilon} outside [0,1]")));
    }
    apply_pattern(z, &ErasureSpec::Truncate { epsilon }.pattern(z.len())?)
}

/// Apply a puncturing channel described by `spec`.
pub fn apply_puncture(z: &TokenSequence, spec: &ErasureSpec) -> Result<ErasedSequence> {
    if spec.is_prefix_pattern() {
        return Err(Error::invalid_input(
            "apply_puncture called with a truncation spec; use apply_truncation",
        ));
    }
    apply_pattern(z, &spec.pattern(z.len())?)
}

/// Erase exactly the positions where `pattern` is false.
pub fn apply_pattern(z: &TokenSequence, pattern: &[bool]) -> Result<ErasedSequence> {
    if pattern.len() != z.len() {
        return Err(Error::shape(format!(
            "pattern length {} vs sequence {}",
            pattern.len(),
            z.len()
        )));
    }
    let mask = z.mask_token();
    let tokens = z
        .tokens()
        .iter()
        .zip(pattern)
        .map(|(&t, &keep)| if keep { t } else { mask })
        .collect();
    ErasedSequence::new(tokens, pattern.to_vec(), z.vocab())
}

/// Truncating-channel capacity `C = t_e / d_s = 1 - eps`.
pub fn capacity(t_e: usize, d_s: usize) -> f64 {
    assert!(t_e <= d_s, "t_e {t_e} exceeds d_s {d_s}");
    t_e as f64 / d_s as f64
}

/// Hex encoding of a received-position bit pattern, MSB-first per byte.
pub fn pattern_to_hex(pattern: &[bool]) -> String {
    let mut out = String::with_capacity(pattern.len().div_ceil(4));
    for chunk in pattern.chunks(8) {
        let mut byte = 0u8;
        for (i, &b) in chunk.iter().enumerate() {
            if b {
                byte |= 1 << (7 - i);
            }
        }
        out.push_str(&format!("{byte:02x}"));
    }
    out
}
