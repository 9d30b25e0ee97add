use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::gfsq::{codebook_size, GfsqConfig};

/// Dimensions of the slow (per-frame) and fast (per-codebook) stacks.
///
/// Text and semantic tokens share one embedding table: text ids occupy
/// `[0, text_vocab)` and semantic id `s` lives at row `text_vocab + s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualArConfig {
    pub model_dim: usize,
    pub slow_layers: usize,
    pub fast_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub text_vocab: usize,
    pub semantic_vocab: usize,
    pub bos_token: u32,
    pub eos_token: u32,
    pub num_codebooks: usize,
    pub codebook_vocab: usize,
    pub max_seq: usize,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f64,
    /// Audio frames per second, used to turn frame counts into durations.
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
}

fn default_rope_base() -> f64 {
    10_000.0
}

fn default_norm_eps() -> f64 {
    1e-6
}

fn default_frame_rate() -> f64 {
    // 44.1 kHz audio at a hop of 2048 samples
    44_100.0 / 2048.0
}

impl DualArConfig {
    /// A small model sized for tests and desk benchmarks.
    pub fn toy(quantizer: &GfsqConfig) -> Self {
        Self {
            model_dim: 32,
            slow_layers: 2,
            fast_layers: 1,
            heads: 4,
            ffn_dim: 64,
            text_vocab: 64,
            semantic_vocab: 34,
            bos_token: 32,
            eos_token: 33,
            num_codebooks: quantizer.groups(),
            codebook_vocab: codebook_size(quantizer) as usize,
            max_seq: 256,
            rope_base: default_rope_base(),
            norm_eps: default_norm_eps(),
            frame_rate: default_frame_rate(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn embed_rows(&self) -> usize {
        self.text_vocab + self.semantic_vocab
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model_dim", self.model_dim),
            ("slow_layers", self.slow_layers),
            ("fast_layers", self.fast_layers),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("text_vocab", self.text_vocab),
            ("semantic_vocab", self.semantic_vocab),
            ("num_codebooks", self.num_codebooks),
            ("codebook_vocab", self.codebook_vocab),
            ("max_seq", self.max_seq),
        ];
        for (name, v) in positive {
            if v == 0 {
                bail!(Config, "{name} must be positive");
            }
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            bail!(
                Config,
                "model_dim {} is not divisible by {} heads",
                self.model_dim,
                self.heads
            );
        }
        if !self.head_dim().is_multiple_of(2) {
            bail!(
                Config,
                "head_dim {} must be even for rotary embeddings",
                self.head_dim()
            );
        }
        if self.eos_token as usize >= self.semantic_vocab || self.bos_token as usize >= self.semantic_vocab {
            bail!(Config, "BOS/EOS ids must lie inside the semantic vocabulary");
        }
        if !(self.norm_eps > 0.0) || !(self.rope_base > 1.0) || !(self.frame_rate > 0.0) {
            bail!(Config, "norm_eps, rope_base and frame_rate must be positive");
        }
        Ok(())
    }

    /// Checks that `K` matches the codebook of the paired quantizer.
    pub fn check_quantizer(&self, quantizer: &GfsqConfig) -> Result<()> {
        if self.codebook_vocab as u64 != codebook_size(quantizer) || self.num_codebooks != quantizer.groups() {
            bail!(
                Config,
                "generator expects {} codebooks of {}, quantizer has {} of {}",
                self.num_codebooks,
                self.codebook_vocab,
                quantizer.groups(),
                codebook_size(quantizer)
            );
        }
        Ok(())
    }
}

/// One slow-stack input token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Text(u32),
    Semantic(u32),
}

impl Token {
    /// Row in the shared embedding table.
    pub fn embed_row(self, config: &DualArConfig) -> Result<usize> {
        match self {
            Token::Text(t) if (t as usize) < config.text_vocab => Ok(t as usize),
            Token::Semantic(s) if (s as usize) < config.semantic_vocab => Ok(config.text_vocab + s as usize),
            other => bail!(Data, "token {other:?} is outside its vocabulary"),
        }
    }
}
