//! Named parameter tensors for the transformer.

use super::config::ModelConfig;
use crate::diffcore::Tensor;
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

/// All model parameters, keyed by stable names. Iteration order is the
/// sorted name order, which keeps initialization, checkpoints and optimizer
/// state deterministic.
#[derive(Debug, Clone)]
pub struct Weights {
    pub config: ModelConfig,
    tensors: BTreeMap<String, Tensor>,
    frozen: bool,
}

/// Parameter names in a fixed order, independent of the map.
pub(crate) fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, dh, v, m) = (cfg.dim, cfg.head_dim(), cfg.vocab_size, cfg.max_context);
    let mut out = vec![
        ("embed".to_string(), vec![v, d]),
        ("pos".to_string(), vec![m, d]),
    ];
    for l in 0..cfg.layers {
        out.push((format!("l{l}.ln1.g"), vec![d]));
        out.push((format!("l{l}.ln1.b"), vec![d]));
        for h in 0..cfg.heads {
            out.push((format!("l{l}.h{h}.wq"), vec![d, dh]));
            out.push((format!("l{l}.h{h}.wk"), vec![d, dh]));
            out.push((format!("l{l}.h{h}.wv"), vec![d, dh]));
            out.push((format!("l{l}.h{h}.wo"), vec![dh, d]));
        }
        out.push((format!("l{l}.ln2.g"), vec![d]));
        out.push((format!("l{l}.ln2.b"), vec![d]));
        out.push((format!("l{l}.ff.w1"), vec![d, cfg.ff_dim]));
        out.push((format!("l{l}.ff.b1"), vec![cfg.ff_dim]));
        out.push((format!("l{l}.ff.w2"), vec![cfg.ff_dim, d]));
        out.push((format!("l{l}.ff.b2"), vec![d]));
    }
    out.push(("lnf.g".to_string(), vec![d]));
    out.push(("lnf.b".to_string(), vec![d]));
    out.push(("out.w".to_string(), vec![d, v]));
    out.push(("out.b".to_string(), vec![v]));
    out
}

/// Standard deviation used for weight and embedding initialization.
pub const INIT_STD: f64 = 0.02;

fn normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    // Box-Muller from two uniform draws; ChaCha8 keeps it reproducible
    // across platforms.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl Weights {
    /// Fresh random initialization. Layer-norm gains start at one, biases
    /// at zero, everything else at N(0, INIT_STD^2).
    pub fn init(config: ModelConfig, seed: u64) -> Result<Weights> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape) in param_specs(&config) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = if name.ends_with(".g") {
                vec![1.0; n]
            } else if name.ends_with(".b") || name.ends_with(".b1")
                || name.ends_with(".b2") || name == "out.b"
            {
                vec![0.0; n]
            } else {
                (0..n).map(|_| normal(&mut rng, INIT_STD)).collect()
            };
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        Ok(Weights { config, tensors, frozen: false })
    }

    pub fn from_tensors(
        config: ModelConfig,
        tensors: BTreeMap<String, Tensor>,
    ) -> Result<Weights> {
        config.validate()?;
        for (name, shape) in param_specs(&config) {
            match tensors.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Dimension(format!(
                        "tensor {name} has shape {:?}, expected {:?}",
                        t.shape(),
                        shape
                    )))
                }
                None => return Err(Error::Config(format!("missing tensor {name}"))),
            }
        }
        Ok(Weights { config, tensors, frozen: false })
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    /// Apply in-place updates from a name-keyed table. Rejected when frozen.
    pub fn apply(&mut self, updates: &BTreeMap<String, Tensor>) -> Result<()> {
        if self.frozen {
            return Err(Error::Contract("attempted to update frozen weights".into()));
        }
        for (name, new) in updates {
            let t = self
                .tensors
                .get_mut(name)
                .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
            if t.shape() != new.shape() {
                return Err(Error::Dimension(format!(
                    "update for {name} has shape {:?}, expected {:?}",
                    new.shape(),
                    t.shape()
                )));
            }
            *t = new.clone();
        }
        Ok(())
    }

    /// Content hash over all parameters in name order; used to assert the
    /// frozen-weights contract bit-for-bit.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, t) in &self.tensors {
            hasher.update(name.as_bytes());
            for v in t.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Row of the embedding table for one token.
    pub fn embedding_row(&self, token: usize) -> &[f64] {
        self.get("embed").row(token)
    }
}
