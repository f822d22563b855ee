//! The masked-LM abstraction the rest of the pipeline trains and queries.
//!
//! Everything upstream (prompting, trainer) talks to a [`ModelBackend`]:
//! tokenization, the mask-position distribution, gradient micro-steps with
//! accumulation and warmup, MLM steps, and snapshot/restore. The bundled
//! [`ReferenceBackend`] is a small deterministic model so the full pipeline
//! runs at desk scale; an adapter to a real pretrained encoder can be swapped
//! in behind the same trait.

mod reference;
mod vocab;

pub use reference::{ReferenceBackend, ReferenceSnapshot};
pub use vocab::{SubwordVocab, MASK_TOKEN, UNK_TOKEN};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

pub type TokenId = usize;

/// Reference backend over a whole-word vocabulary built from every text,
/// pattern word and verbalizer word in the corpus.
pub fn reference_from_corpus(corpus: &Corpus, dim: usize, init_seed: u64) -> ReferenceBackend {
    let mut words: Vec<String> = corpus
        .all_texts()
        .flat_map(|t| t.split_whitespace())
        .map(|w| w.to_lowercase())
        .collect();
    words.extend(
        corpus
            .pattern_texts()
            .flat_map(|t| t.split_whitespace())
            .filter(|w| !w.contains('{'))
            .map(|w| w.to_lowercase()),
    );
    words.extend(corpus.verbalizer_words().map(|w| w.to_lowercase()));
    let vocab = SubwordVocab::from_units(words);
    ReferenceBackend::new(vocab, dim, init_seed)
}

/// Training hyperparameters shared by every phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub grad_accumulation: usize,
    pub warmup_steps: u64,
    pub dropout: f64,
    pub max_epochs_step1: u32,
    /// Evaluations without improvement before a phase stops.
    pub early_stop_patience: u32,
    /// Validation cadence in effective updates.
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-5,
            batch_size: 1,
            grad_accumulation: 16,
            warmup_steps: 10,
            dropout: 0.1,
            max_epochs_step1: 1,
            early_stop_patience: 5,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0
            && self.batch_size > 0
            && self.grad_accumulation > 0
            && self.warmup_steps > 0
            && self.max_epochs_step1 > 0
            && self.early_stop_patience > 0
            && self.eval_every > 0;
        if !positive {
            return Err(Error::InvalidConfig {
                message: "all training parameters must be positive".into(),
            });
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig {
                message: format!("dropout must be in [0,1), got {}", self.dropout),
            });
        }
        Ok(())
    }

    /// Digest over the fields that influence a training trajectory.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(format!(
            "{};{};{};{};{};{};{};{}",
            self.learning_rate,
            self.batch_size,
            self.grad_accumulation,
            self.warmup_steps,
            self.dropout,
            self.max_epochs_step1,
            self.early_stop_patience,
            self.eval_every,
        ));
        hex_prefix(&h.finalize())
    }
}

fn hex_prefix(bytes: &[u8]) -> String {
    bytes.iter().take(12).map(|b| format!("{b:02x}")).collect()
}

/// One classification training example: the prompted text, the subword ids
/// of every label's verbalizer word (declared order) and the gold index.
#[derive(Debug, Clone)]
pub struct ClassExample {
    pub prompted: String,
    pub label_subwords: Vec<Vec<TokenId>>,
    pub gold: usize,
}

/// Outcome of one micro-step.
#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    pub loss: f64,
    /// True when this micro-step completed an accumulation window and the
    /// parameters were updated.
    pub applied_update: bool,
}

pub trait ModelBackend {
    /// Opaque immutable model state; restoring reproduces outputs bit-exactly.
    type Snapshot: Clone;

    /// Stable identifier covering architecture, vocabulary and initialization.
    fn backend_id(&self) -> String;

    fn mask_token(&self) -> &str;

    fn vocab_size(&self) -> usize;

    /// Subword ids for one word. Errors if any piece is unknown.
    fn tokenize(&self, word: &str) -> Result<Vec<TokenId>>;

    /// Probability vector over the vocabulary at the mask position of a
    /// prompted text containing exactly one mask token.
    fn mask_distribution(&self, prompted: &str) -> Result<Vec<f64>>;

    /// Reseed all stochasticity (dropout, MLM masking) and clear pending
    /// accumulation; called once at the start of each training phase.
    fn begin_phase(&mut self, seed: u64);

    /// One classification micro-batch: cross-entropy over renormalized label
    /// scores. Gradients accumulate; the parameter update fires once per
    /// accumulation window with warmup-scaled learning rate.
    fn train_step(&mut self, batch: &[ClassExample], config: &TrainConfig) -> Result<StepReport>;

    /// One masked-language-modeling micro-step on a raw text: 15% of the
    /// subwords (rounded up, at least one) are masked and trained to recover.
    fn mlm_step(&mut self, text: &str, config: &TrainConfig) -> Result<StepReport>;

    /// Apply any partially accumulated window at phase end. Returns true if
    /// an update was applied.
    fn flush_pending(&mut self, config: &TrainConfig) -> Result<bool>;

    /// Number of parameter updates applied in the current phase.
    fn effective_updates(&self) -> u64;

    fn snapshot(&self) -> Self::Snapshot;

    fn restore(&mut self, snapshot: &Self::Snapshot);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_config_defaults_are_the_published_values() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate, 5e-5);
        assert_eq!(cfg.batch_size, 1);
        assert_eq!(cfg.grad_accumulation, 16);
        assert_eq!(cfg.warmup_steps, 10);
        assert_eq!(cfg.dropout, 0.1);
        assert_eq!(cfg.max_epochs_step1, 1);
        assert_eq!(cfg.early_stop_patience, 5);
        assert_eq!(cfg.eval_every, 100);
        cfg.validate().unwrap();
    }

    #[test]
    fn train_config_rejects_bad_values() {
        let bad = [
            TrainConfig {
                dropout: 1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn config_digest_tracks_every_field() {
        let base = TrainConfig::default();
        let mut other = base.clone();
        assert_eq!(base.digest(), other.digest());
        other.eval_every = 99;
        assert_ne!(base.digest(), other.digest());
    }
}
