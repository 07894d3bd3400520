//! Desk-scale pipeline for reducing language-model hallucination by
//! optimizing a continuous system-message postfix on a synthetic
//! names-retrieval task, with a KL reference loss to keep general behavior
//! intact, and exact oracles for every metric.
//!
//! The crate is organized as a stack:
//!
//! - [`diffcore`]: dense f64 tensors with reverse-mode autodiff,
//! - [`tinylm`]: a small decoder-only transformer with tokenizer, postfix
//!   injection, sampling and teacher-forced scoring,
//! - [`tasks`]: seeded generators and exact oracles for the synthetic tasks,
//! - [`trainer`]: loss assembly, Adam, prefix/full/pretrain regimes,
//! - [`metrics`]: hallucination rates, n-gram overlap, entity grounding,
//! - [`harness`]: experiment orchestration, run directories, comparison.

pub mod diffcore;
pub mod harness;
pub mod metrics;
pub mod tasks;
pub mod tinylm;
pub mod trainer;

use thiserror::Error;

/// Crate-wide error type. Variants map onto the failure classes the CLI
/// translates into exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unknown word {word:?} is not in the vocabulary")]
    Vocabulary { word: String },

    #[error("context length exceeded: need {needed} positions, model allows {max}")]
    ContextLength { needed: usize, max: usize },

    #[error("generation constraints unsatisfiable: {0}")]
    Generation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("reference continuation cache miss for example {0}")]
    CacheMiss(String),

    #[error("runs are not comparable: {0}")]
    Comparability(String),

    #[error("judge request failed: {0}")]
    Judge(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
