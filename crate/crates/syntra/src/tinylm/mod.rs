//! A small decoder-only transformer: tokenizer, system-message assembly
//! with continuous postfix injection, sampling, and teacher-forced scoring.

mod checkpoint;
mod config;
mod message;
mod model;
mod vocab;
mod weights;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{ModelConfig, PositionalKind};
pub use message::{render_prompt, PromptParts, SystemMessage, DEFAULT_SYSTEM_TEXT};
pub use model::{injection_index, DecodeConfig, DecodeMode, Lm, LmGraph, Mode};
pub use vocab::{
    TokenId, Vocab, BOS, COMMA, EOS, NEWLINE, PAD, RESERVED, ROLE_ASSISTANT,
    ROLE_ASSISTANT_TEXT, ROLE_HUMAN, ROLE_HUMAN_TEXT, ROLE_SYSTEM, ROLE_SYSTEM_TEXT, SPACE,
};
pub use weights::{Weights, INIT_STD};
