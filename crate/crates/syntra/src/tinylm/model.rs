//! Causal transformer forward passes, postfix injection, scoring and
//! sampling. All passes, including inference, run through the diffcore
//! graph so there is exactly one forward implementation.

use super::message::{render_prompt, PromptParts, SystemMessage};
use super::vocab::{TokenId, Vocab, EOS, NEWLINE};
use super::weights::Weights;
use crate::diffcore::{softmax_row, Graph, NodeId, Tensor};
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Additive mask value for future positions; finite so every tensor stays
/// NaN-free, large enough that masked probabilities underflow to zero.
const MASK_NEG: f64 = -1e30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Weights enter the graph as constants; backward never touches them.
    Frozen,
    /// Weights enter as differentiable leaves.
    Trainable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Greedy,
    Sampled,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub temperature: f64,
    pub max_len: usize,
    pub seed: u64,
}

impl DecodeConfig {
    pub fn greedy(max_len: usize) -> Self {
        DecodeConfig { mode: DecodeMode::Greedy, temperature: 1.0, max_len, seed: 0 }
    }

    pub fn sampled(temperature: f64, max_len: usize, seed: u64) -> Self {
        DecodeConfig { mode: DecodeMode::Sampled, temperature, max_len, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if matches!(self.mode, DecodeMode::Sampled) && self.temperature <= 0.0 {
            return Err(Error::Config(format!(
                "sampled decoding needs temperature > 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// One computation graph over a fixed set of weights. A single `LmGraph`
/// can hold several scored examples (one batch), sharing parameter nodes
/// so gradients accumulate across them.
pub struct LmGraph<'w> {
    pub graph: Graph,
    weights: &'w Weights,
    nodes: BTreeMap<String, NodeId>,
    masks: BTreeMap<usize, NodeId>,
}

impl<'w> LmGraph<'w> {
    pub fn build(weights: &'w Weights, mode: Mode) -> Self {
        let mut graph = Graph::new();
        let mut nodes = BTreeMap::new();
        for (name, tensor) in weights.tensors() {
            let id = match mode {
                Mode::Frozen => graph.constant(tensor.clone()),
                Mode::Trainable => graph.leaf(tensor.clone()),
            };
            nodes.insert(name.clone(), id);
        }
        LmGraph { graph, weights, nodes, masks: BTreeMap::new() }
    }

    pub fn param(&self, name: &str) -> NodeId {
        self.nodes[name]
    }

    /// Gradient of a named parameter after backward, if any reached it.
    pub fn param_grad(&self, name: &str) -> Option<&Tensor> {
        self.graph.grad(self.nodes[name])
    }

    /// Insert the postfix matrix as a leaf (trainable) or constant.
    pub fn postfix_node(&mut self, msg: &SystemMessage, trainable: bool) -> Option<NodeId> {
        if msg.postfix_len() == 0 {
            return None;
        }
        Some(if trainable {
            self.graph.leaf(msg.postfix().clone())
        } else {
            self.graph.constant(msg.postfix().clone())
        })
    }

    /// Token embeddings plus learned positional rows for stream positions
    /// `start_pos..start_pos + tokens.len()`.
    fn embed_rows(&mut self, tokens: &[TokenId], start_pos: usize) -> Result<NodeId> {
        let embed = self.param("embed");
        let pos = self.param("pos");
        let tok = self.graph.gather_rows(embed, tokens)?;
        let positions: Vec<usize> = (start_pos..start_pos + tokens.len()).collect();
        let pe = self.graph.gather_rows(pos, &positions)?;
        self.graph.add(tok, pe)
    }

    /// Embedded prompt with the postfix spliced in before the first newline
    /// token. Discrete embeddings keep their original stream positions, so
    /// injection leaves their values untouched.
    fn assemble(
        &mut self,
        postfix: Option<NodeId>,
        tokens: &[TokenId],
    ) -> Result<NodeId> {
        match postfix {
            None => self.embed_rows(tokens, 0),
            Some(p) => {
                let inj = injection_index(tokens);
                if inj == 0 {
                    let rest = self.embed_rows(tokens, 0)?;
                    self.graph.concat_rows(&[p, rest])
                } else if inj == tokens.len() {
                    let head = self.embed_rows(tokens, 0)?;
                    self.graph.concat_rows(&[head, p])
                } else {
                    let head = self.embed_rows(&tokens[..inj], 0)?;
                    let rest = self.embed_rows(&tokens[inj..], inj)?;
                    self.graph.concat_rows(&[head, p, rest])
                }
            }
        }
    }

    fn causal_mask(&mut self, m: usize) -> NodeId {
        if let Some(&id) = self.masks.get(&m) {
            return id;
        }
        let mut data = vec![0.0; m * m];
        for i in 0..m {
            for j in (i + 1)..m {
                data[i * m + j] = MASK_NEG;
            }
        }
        let id = self
            .graph
            .constant(Tensor::matrix(m, m, data).expect("mask shape"));
        self.masks.insert(m, id);
        id
    }

    /// Pre-norm causal transformer stack over embedded rows.
    pub fn transformer(&mut self, mut x: NodeId) -> Result<NodeId> {
        let cfg = &self.weights.config;
        let m = self.graph.value(x).rows();
        let mask = self.causal_mask(m);
        let scale = 1.0 / (cfg.head_dim() as f64).sqrt();
        for l in 0..cfg.layers {
            let g1 = self.param(&format!("l{l}.ln1.g"));
            let b1 = self.param(&format!("l{l}.ln1.b"));
            let xn = self.graph.layer_norm(x, g1, b1, 1e-5)?;
            let mut attn: Option<NodeId> = None;
            for h in 0..cfg.heads {
                let wq = self.param(&format!("l{l}.h{h}.wq"));
                let wk = self.param(&format!("l{l}.h{h}.wk"));
                let wv = self.param(&format!("l{l}.h{h}.wv"));
                let wo = self.param(&format!("l{l}.h{h}.wo"));
                let q = self.graph.matmul(xn, wq)?;
                let k = self.graph.matmul(xn, wk)?;
                let v = self.graph.matmul(xn, wv)?;
                let scores = self.graph.matmul_nt(q, k)?;
                let scaled = self.graph.scale(scores, scale);
                let masked = self.graph.add(scaled, mask)?;
                let probs = self.graph.softmax_rows(masked);
                let ctx = self.graph.matmul(probs, v)?;
                let proj = self.graph.matmul(ctx, wo)?;
                attn = Some(match attn {
                    None => proj,
                    Some(acc) => self.graph.add(acc, proj)?,
                });
            }
            x = self.graph.add(x, attn.expect("at least one head"))?;

            let g2 = self.param(&format!("l{l}.ln2.g"));
            let b2 = self.param(&format!("l{l}.ln2.b"));
            let x2 = self.graph.layer_norm(x, g2, b2, 1e-5)?;
            let w1 = self.param(&format!("l{l}.ff.w1"));
            let bb1 = self.param(&format!("l{l}.ff.b1"));
            let w2 = self.param(&format!("l{l}.ff.w2"));
            let bb2 = self.param(&format!("l{l}.ff.b2"));
            let h1 = self.graph.matmul(x2, w1)?;
            let h1b = self.graph.add_row_vec(h1, bb1)?;
            let act = self.graph.gelu(h1b);
            let h2 = self.graph.matmul(act, w2)?;
            let h2b = self.graph.add_row_vec(h2, bb2)?;
            x = self.graph.add(x, h2b)?;
        }
        Ok(x)
    }

    /// Final norm and vocabulary projection for a row range of the hidden
    /// states. Projecting only the rows that are read keeps scoring cheap.
    pub fn logits_rows(&mut self, hidden: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let sliced = self.graph.slice_rows(hidden, start, len)?;
        let g = self.param("lnf.g");
        let b = self.param("lnf.b");
        let normed = self.graph.layer_norm(sliced, g, b, 1e-5)?;
        let w = self.param("out.w");
        let ob = self.param("out.b");
        let proj = self.graph.matmul(normed, w)?;
        self.graph.add_row_vec(proj, ob)
    }

    /// Teacher-forced sum of target-token log-probabilities (EOS included).
    ///
    /// Returns the scalar log-likelihood node and the number of scored
    /// target tokens.
    pub fn score_target(
        &mut self,
        postfix: Option<NodeId>,
        msg: &SystemMessage,
        parts: &PromptParts,
        target: &str,
        vocab: &Vocab,
    ) -> Result<(NodeId, usize)> {
        let tokens = vocab.encode(&render_prompt(&msg.text, parts))?;
        let mut target_tokens = vocab.encode(target)?;
        target_tokens.push(EOS);
        let (m, n, t) = (tokens.len(), msg.postfix_len(), target_tokens.len());
        let max = self.weights.config.max_context;
        if m + n + t > max {
            return Err(Error::ContextLength { needed: m + n + t, max });
        }
        let prompt_rows = self.assemble(postfix, &tokens)?;
        let input = if t > 1 {
            let fed = self.embed_rows(&target_tokens[..t - 1], m)?;
            self.graph.concat_rows(&[prompt_rows, fed])?
        } else {
            prompt_rows
        };
        let hidden = self.transformer(input)?;
        let logits = self.logits_rows(hidden, m + n - 1, t)?;
        let ce = self.graph.cross_entropy(logits, &target_tokens)?;
        let tll = self.graph.scale(ce, -(t as f64));
        Ok((tll, t))
    }

    /// Teacher-forced logits at each continuation position.
    pub fn continuation_logits(
        &mut self,
        postfix: Option<NodeId>,
        msg: &SystemMessage,
        parts: &PromptParts,
        continuation: &[TokenId],
        vocab: &Vocab,
    ) -> Result<NodeId> {
        let tokens = vocab.encode(&render_prompt(&msg.text, parts))?;
        let (m, n, t) = (tokens.len(), msg.postfix_len(), continuation.len());
        let max = self.weights.config.max_context;
        if m + n + t > max {
            return Err(Error::ContextLength { needed: m + n + t, max });
        }
        if t == 0 {
            let empty = Tensor::zeros(vec![0, self.weights.config.vocab_size]);
            return Ok(self.graph.constant(empty));
        }
        let prompt_rows = self.assemble(postfix, &tokens)?;
        let input = if t > 1 {
            let fed = self.embed_rows(&continuation[..t - 1], m)?;
            self.graph.concat_rows(&[prompt_rows, fed])?
        } else {
            prompt_rows
        };
        let hidden = self.transformer(input)?;
        self.logits_rows(hidden, m + n - 1, t)
    }
}

/// Position where the postfix is injected: directly before the first
/// newline of the rendered prompt, which ends the system line.
pub fn injection_index(tokens: &[TokenId]) -> usize {
    tokens.iter().position(|&t| t == NEWLINE).unwrap_or(tokens.len())
}

/// A language model view: weights plus the vocabulary they index.
#[derive(Clone, Copy)]
pub struct Lm<'a> {
    pub weights: &'a Weights,
    pub vocab: &'a Vocab,
}

impl<'a> Lm<'a> {
    pub fn new(weights: &'a Weights, vocab: &'a Vocab) -> Self {
        Lm { weights, vocab }
    }

    /// Embedded token stream: row j is embedding of token j plus the
    /// positional encoding for stream position j.
    pub fn embed(&self, tokens: &[TokenId]) -> Result<Tensor> {
        let d = self.weights.config.dim;
        let embed = self.weights.get("embed");
        let pos = self.weights.get("pos");
        if tokens.len() > pos.rows() {
            return Err(Error::ContextLength {
                needed: tokens.len(),
                max: pos.rows(),
            });
        }
        let mut data = Vec::with_capacity(tokens.len() * d);
        for (j, &t) in tokens.iter().enumerate() {
            if t >= embed.rows() {
                return Err(Error::Index(format!(
                    "token id {t} outside embedding table of {}",
                    embed.rows()
                )));
            }
            for (e, p) in embed.row(t).iter().zip(pos.row(j)) {
                data.push(e + p);
            }
        }
        Tensor::matrix(tokens.len(), d, data)
    }

    /// Value-level assembled input: embedded system tokens, postfix rows,
    /// then the remaining embedded prompt, positions unchanged.
    pub fn assemble_input(&self, msg: &SystemMessage, parts: &PromptParts) -> Result<Tensor> {
        let tokens = self.vocab.encode(&render_prompt(&msg.text, parts))?;
        let (m, n) = (tokens.len(), msg.postfix_len());
        let max = self.weights.config.max_context;
        if m + n > max {
            return Err(Error::ContextLength { needed: m + n, max });
        }
        let plain = self.embed(&tokens)?;
        if n == 0 {
            return Ok(plain);
        }
        let inj = injection_index(&tokens);
        let d = self.weights.config.dim;
        let mut data = Vec::with_capacity((m + n) * d);
        data.extend_from_slice(&plain.data()[..inj * d]);
        data.extend_from_slice(msg.postfix().data());
        data.extend_from_slice(&plain.data()[inj * d..]);
        Tensor::matrix(m + n, d, data)
    }

    /// Full logits for an already-embedded input, one row per position.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let max = self.weights.config.max_context;
        if input.rows() > max {
            return Err(Error::ContextLength { needed: input.rows(), max });
        }
        let mut lm = LmGraph::build(self.weights, Mode::Frozen);
        let x = lm.graph.constant(input.clone());
        let hidden = lm.transformer(x)?;
        let rows = input.rows();
        let logits = lm.logits_rows(hidden, 0, rows)?;
        Ok(lm.graph.value(logits).clone())
    }

    /// Autoregressive decoding. Greedy mode is deterministic; sampled mode
    /// is deterministic given the seed. Stops at EOS or `max_len` tokens.
    pub fn generate(
        &self,
        msg: &SystemMessage,
        parts: &PromptParts,
        cfg: &DecodeConfig,
    ) -> Result<String> {
        cfg.validate()?;
        let tokens = self.vocab.encode(&render_prompt(&msg.text, parts))?;
        let (m, n) = (tokens.len(), msg.postfix_len());
        let max = self.weights.config.max_context;
        if m + n + 1 > max {
            return Err(Error::ContextLength { needed: m + n + 1, max });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut generated: Vec<TokenId> = Vec::new();
        while generated.len() < cfg.max_len && m + n + generated.len() < max {
            let mut lm = LmGraph::build(self.weights, Mode::Frozen);
            let postfix = lm.postfix_node(msg, false);
            let prompt_rows = lm.assemble(postfix, &tokens)?;
            let input = if generated.is_empty() {
                prompt_rows
            } else {
                let fed = lm.embed_rows(&generated, m)?;
                lm.graph.concat_rows(&[prompt_rows, fed])?
            };
            let hidden = lm.transformer(input)?;
            let last = m + n + generated.len() - 1;
            let logits = lm.logits_rows(hidden, last, 1)?;
            let row = lm.graph.value(logits).row(0).to_vec();
            let next = match cfg.mode {
                DecodeMode::Greedy => argmax(&row),
                DecodeMode::Sampled => {
                    let scaled: Vec<f64> = row.iter().map(|v| v / cfg.temperature).collect();
                    sample_index(&softmax_row(&scaled), &mut rng)
                }
            };
            if next == EOS {
                break;
            }
            generated.push(next);
        }
        self.vocab.decode(&generated)
    }

    /// Teacher-forced log-likelihood of `target` (plus EOS) given the
    /// prompt; value only.
    pub fn target_log_likelihood(
        &self,
        msg: &SystemMessage,
        parts: &PromptParts,
        target: &str,
    ) -> Result<f64> {
        let mut lm = LmGraph::build(self.weights, Mode::Frozen);
        let postfix = lm.postfix_node(msg, false);
        let (tll, _) = lm.score_target(postfix, msg, parts, target, self.vocab)?;
        Ok(lm.graph.value(tll).item())
    }

    /// Teacher-forced logits over each continuation position; value only.
    pub fn next_token_distributions(
        &self,
        msg: &SystemMessage,
        parts: &PromptParts,
        continuation: &[TokenId],
    ) -> Result<Tensor> {
        let tokens = self.vocab.encode(&render_prompt(&msg.text, parts))?;
        let (m, n, t) = (tokens.len(), msg.postfix_len(), continuation.len());
        let max = self.weights.config.max_context;
        if m + n + t > max {
            return Err(Error::ContextLength { needed: m + n + t, max });
        }
        if t == 0 {
            return Ok(Tensor::zeros(vec![0, self.weights.config.vocab_size]));
        }
        let mut lm = LmGraph::build(self.weights, Mode::Frozen);
        let postfix = lm.postfix_node(msg, false);
        let prompt_rows = lm.assemble(postfix, &tokens)?;
        let input = if t > 1 {
            let fed = lm.embed_rows(&continuation[..t - 1], m)?;
            lm.graph.concat_rows(&[prompt_rows, fed])?
        } else {
            prompt_rows
        };
        let hidden = lm.transformer(input)?;
        let logits = lm.logits_rows(hidden, m + n - 1, t)?;
        Ok(lm.graph.value(logits).clone())
    }

    /// Greedy continuation tokens for a prompt, EOS appended, capped at
    /// `max_len` tokens. Used for reference-loss caching.
    pub fn greedy_continuation(
        &self,
        msg: &SystemMessage,
        parts: &PromptParts,
        max_len: usize,
    ) -> Result<Vec<TokenId>> {
        let cfg = DecodeConfig::greedy(max_len);
        let text = self.generate(msg, parts, &cfg)?;
        let mut toks = self.vocab.encode(&text)?;
        toks.push(EOS);
        Ok(toks)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
