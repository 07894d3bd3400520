//! Model shape configuration.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalKind {
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub ff_dim: usize,
    pub vocab_size: usize,
    pub max_context: usize,
    pub positional: PositionalKind,
}

impl ModelConfig {
    /// Desk-scale default: small enough to pretrain on a CPU in minutes,
    /// large enough that the base model attempts the task.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            layers: 2,
            heads: 4,
            dim: 64,
            ff_dim: 256,
            vocab_size,
            max_context: 512,
            positional: PositionalKind::Learned,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model width {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.layers == 0 || self.dim == 0 || self.vocab_size == 0 || self.max_context == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        Ok(())
    }
}
