//! A small pre-norm decoder-only transformer with hand-written backward
//! passes, selective training of transformation rows and two-stage
//! distillation.

mod forward;
mod infer;
pub mod kernels;
mod params;
#[cfg(test)]
mod tests;
mod train;

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compose::ComposeError;
use crate::vocab::VocabError;

pub use forward::{backward, forward_train, Activations, BackwardOptions, Grads};
pub(crate) use infer::generate_with;
pub use infer::{generate, hidden_states, logits_last, output_text, score_text, slot_for_output, Head, KvCache, Patch};
pub use params::{init_model, LayerIdx, Layout, ModelParams, TensorInfo, TrainMask};
pub use train::{
    build_distill_examples, distill_stage, grad_check, kd_loss, make_lm_examples, per_word_perplexity, stage2_loss, stage_loss,
    train_lm, DistillExample, DistillStage, GradCheck, TrainReport,
};

#[derive(Debug, Error)]
pub enum LmError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("sequence of {len} slots exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("stage order violation: {0}")]
    StageOrderViolation(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_mult: usize,
    pub max_seq: usize,
    pub vocab_rows: usize,
    pub tie_embeddings: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk(2000)
    }
}

impl ModelConfig {
    pub fn desk(vocab_rows: usize) -> Self {
        Self {
            dim: 128,
            n_layers: 4,
            n_heads: 4,
            ffn_mult: 4,
            max_seq: 64,
            vocab_rows,
            tie_embeddings: false,
            seed: 1,
        }
    }

    pub fn paper(vocab_rows: usize) -> Self {
        Self {
            max_seq: 256,
            ..Self::desk(vocab_rows)
        }
    }

    pub fn ffn_dim(&self) -> usize {
        self.ffn_mult * self.dim
    }

    pub fn validate(&self) -> Result<(), LmError> {
        let bad = |m: &str| Err(LmError::InvalidConfig(m.to_string()));
        if self.dim == 0 || self.n_heads == 0 || self.dim % self.n_heads != 0 {
            return bad("dim must be a positive multiple of n_heads");
        }
        if self.max_seq < 2 {
            return bad("max_seq must be at least 2");
        }
        if self.n_layers == 0 || self.ffn_mult == 0 || self.vocab_rows == 0 {
            return bad("n_layers, ffn_mult and vocab_rows must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSpec {
    pub learning_rate: f32,
    pub warmup_ratio: f32,
    pub weight_decay: f32,
    pub n_examples: usize,
    pub n_epochs: usize,
    pub batch: usize,
    pub kd_temperature: f32,
    /// Stage 2: renormalise the student over original-vocabulary surfaces
    /// (otherwise the union softmax is only masked).
    pub renormalize_stage2: bool,
    pub seed: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            learning_rate: 3e-3,
            warmup_ratio: 0.03,
            weight_decay: 0.0,
            n_examples: 20_000,
            n_epochs: 1,
            batch: 16,
            kd_temperature: 1.0,
            renormalize_stage2: true,
            seed: 1,
        }
    }
}

impl TrainSpec {
    /// Hyperparameters used for the billion-parameter models.
    pub fn paper() -> Self {
        Self {
            learning_rate: 5e-5,
            warmup_ratio: 0.03,
            weight_decay: 0.0,
            n_examples: 20_000,
            n_epochs: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), LmError> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.warmup_ratio)
            && self.weight_decay >= 0.0
            && self.n_epochs > 0
            && self.batch > 0
            && self.kd_temperature > 0.0;
        if ok {
            Ok(())
        } else {
            Err(LmError::InvalidConfig(format!("train spec out of range: {self:?}")))
        }
    }

    pub fn n_steps(&self) -> usize {
        self.n_examples.div_ceil(self.batch) * self.n_epochs
    }

    /// Linear warmup, then constant.
    pub fn lr_at(&self, step: usize) -> f32 {
        let warm = (self.warmup_ratio * self.n_steps() as f32).ceil() as usize;
        if step < warm {
            self.learning_rate * (step + 1) as f32 / warm as f32
        } else {
            self.learning_rate
        }
    }
}
