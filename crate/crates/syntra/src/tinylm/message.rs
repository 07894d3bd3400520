//! System messages, prompt parts and the chat template.

use crate::diffcore::Tensor;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// System instruction used everywhere, including un-tuned baselines.
pub const DEFAULT_SYSTEM_TEXT: &str = "You are a helpful, honest, and conservative AI system \
                                       designed to answer queries using only the provided context.";

/// A prompt split into the context the answer must be grounded in and the
/// query appended after it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptParts {
    pub context: String,
    pub query: String,
}

impl PromptParts {
    pub fn new(context: impl Into<String>, query: impl Into<String>) -> Self {
        PromptParts { context: context.into(), query: query.into() }
    }

    /// The prompt body as placed between the role markers.
    pub fn body(&self) -> String {
        format!("{}\n\n{}", self.context, self.query)
    }
}

/// Render the full chat template around a prompt.
pub fn render_prompt(system_text: &str, parts: &PromptParts) -> String {
    format!(
        "### System: {system_text}\n\n### Human: {}\n\n### Assistant:",
        parts.body()
    )
}

/// The discrete system text plus the continuous postfix appended to its
/// embedding. The postfix is stored one row per soft token (n x d).
#[derive(Debug, Clone)]
pub struct SystemMessage {
    pub text: String,
    postfix: Tensor,
}

impl SystemMessage {
    /// Message with an empty postfix: the original, un-tuned system message.
    pub fn plain(text: impl Into<String>, dim: usize) -> Self {
        SystemMessage { text: text.into(), postfix: Tensor::zeros(vec![0, dim]) }
    }

    pub fn with_postfix(text: impl Into<String>, postfix: Tensor) -> Result<Self> {
        if postfix.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "postfix must be a 2-d matrix, got shape {:?}",
                postfix.shape()
            )));
        }
        Ok(SystemMessage { text: text.into(), postfix })
    }

    /// Soft token count n.
    pub fn postfix_len(&self) -> usize {
        self.postfix.rows()
    }

    pub fn postfix(&self) -> &Tensor {
        &self.postfix
    }

    pub fn set_postfix(&mut self, postfix: Tensor) {
        self.postfix = postfix;
    }
}
