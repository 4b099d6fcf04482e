//! Continued MLM + NSP pretraining of an encoder over normalized posts.

mod heads;
mod masking;
mod nsp;
mod train;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use heads::PretrainHeads;
pub use masking::{apply_mlm_mask, MaskedBatch, MaskedRow, NspLabel, Perturbation, IGNORE_INDEX};
pub use nsp::{build_nsp_pairs, split_sentences, NspPair};
pub use train::{
    run_pretraining, run_pretraining_with_heads, write_trajectory_csv, LossRecord, PretrainOutcome,
};

#[derive(Debug, thiserror::Error)]
pub enum PretrainError {
    #[error("invalid pretraining config: {0}")]
    InvalidConfig(String),
    #[error("cannot build sentence pairs: {0}")]
    CannotPair(String),
    #[error("sequence has no maskable token")]
    NothingMaskable,
    #[error("tokenizer has {tokenizer} tokens but the encoder embedding table has {encoder} rows")]
    VocabMismatch { tokenizer: usize, encoder: usize },
    #[error("encoder weights are randomly initialised; set allow_random_init for toy runs")]
    RandomInitRefused,
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub mask_rate: f64,
    pub mask_token_frac: f64,
    pub random_token_frac: f64,
    pub keep_frac: f64,
    pub nsp_positive_rate: f64,
    pub batch_size: usize,
    pub max_seq_len: usize,
    pub init_checkpoint: Option<PathBuf>,
    pub seed: u64,
    pub learning_rate: f64,
    /// Train the next-sentence objective alongside MLM.
    pub use_nsp: bool,
    /// Toy runs only: accept an encoder that was not loaded from a checkpoint.
    pub allow_random_init: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            mask_rate: 0.15,
            mask_token_frac: 0.8,
            random_token_frac: 0.1,
            keep_frac: 0.1,
            nsp_positive_rate: 0.5,
            batch_size: 8,
            max_seq_len: 128,
            init_checkpoint: None,
            seed: 0,
            learning_rate: 2e-5,
            use_nsp: true,
            allow_random_init: false,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<(), PretrainError> {
        let bad = |m: String| Err(PretrainError::InvalidConfig(m));
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return bad(format!(
                "mask_rate must be in (0, 1), got {}",
                self.mask_rate
            ));
        }
        for (name, v) in [
            ("mask_token_frac", self.mask_token_frac),
            ("random_token_frac", self.random_token_frac),
            ("keep_frac", self.keep_frac),
            ("nsp_positive_rate", self.nsp_positive_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        let sum = self.mask_token_frac + self.random_token_frac + self.keep_frac;
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("perturbation fractions sum to {sum}, expected 1"));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.max_seq_len < 5 {
            return bad(format!(
                "max_seq_len {} is too short for a sentence pair",
                self.max_seq_len
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        PretrainConfig::default().validate().unwrap();
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let cfg = PretrainConfig {
            keep_frac: 0.2,
            ..Default::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("sum to"));
    }

    #[test]
    fn mask_rate_bounds() {
        for r in [0.0, 1.0, -0.1] {
            let cfg = PretrainConfig {
                mask_rate: r,
                ..Default::default()
            };
            assert!(cfg.validate().is_err());
        }
    }
}
