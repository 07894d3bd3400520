//! Binary checkpoint format.
//!
//! Little-endian layout: magic `SYNT`, format version (u32), model config
//! (seven u32 fields), tensor count (u32), then per tensor: name length
//! (u32), name bytes, rank (u32), dims (u64 each), f64 payload.

use super::config::{ModelConfig, PositionalKind};
use super::weights::Weights;
use crate::diffcore::Tensor;
use crate::{Error, Result};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SYNT";
const VERSION: u32 = 1;

/// Write weights plus any extra named tensors (e.g. a trained postfix).
pub fn save_checkpoint(
    path: &Path,
    weights: &Weights,
    extra: &BTreeMap<String, Tensor>,
) -> Result<()> {
    let io = |e| Error::io(path.display().to_string(), e);
    let file = std::fs::File::create(path).map_err(io)?;
    let mut w = std::io::BufWriter::new(file);
    let cfg = &weights.config;
    w.write_all(MAGIC).map_err(io)?;
    for v in [
        VERSION,
        cfg.layers as u32,
        cfg.heads as u32,
        cfg.dim as u32,
        cfg.ff_dim as u32,
        cfg.vocab_size as u32,
        cfg.max_context as u32,
        match cfg.positional {
            PositionalKind::Learned => 0u32,
        },
    ] {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    let count = (weights.tensors().len() + extra.len()) as u32;
    w.write_all(&count.to_le_bytes()).map_err(io)?;
    for (name, t) in weights.tensors().iter().chain(extra.iter()) {
        write_tensor(&mut w, name, t).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn write_tensor<W: Write>(w: &mut W, name: &str, t: &Tensor) -> std::io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Read a checkpoint back; tensors that are not model parameters (such as
/// `postfix`) are returned separately.
pub fn load_checkpoint(path: &Path) -> Result<(Weights, BTreeMap<String, Tensor>)> {
    let io = |e| Error::io(path.display().to_string(), e);
    let file = std::fs::File::open(path).map_err(io)?;
    let mut r = std::io::BufReader::new(file);
    let parse = |message: String| Error::Parse {
        location: path.display().to_string(),
        message,
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(parse(format!("bad magic {magic:?}, expected SYNT")));
    }
    let mut fields = [0u32; 8];
    for f in fields.iter_mut() {
        *f = read_u32(&mut r).map_err(io)?;
    }
    if fields[0] != VERSION {
        return Err(parse(format!("unsupported version {}", fields[0])));
    }
    if fields[7] != 0 {
        return Err(parse(format!("unknown positional-encoding kind {}", fields[7])));
    }
    let config = ModelConfig {
        layers: fields[1] as usize,
        heads: fields[2] as usize,
        dim: fields[3] as usize,
        ff_dim: fields[4] as usize,
        vocab_size: fields[5] as usize,
        max_context: fields[6] as usize,
        positional: PositionalKind::Learned,
    };
    let count = read_u32(&mut r).map_err(io)?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r).map_err(io)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(io)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| parse(format!("tensor name is not utf-8: {e}")))?;
        let rank = read_u32(&mut r).map_err(io)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r).map_err(io)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = vec![0.0f64; n];
        let mut buf = [0u8; 8];
        for v in data.iter_mut() {
            r.read_exact(&mut buf).map_err(io)?;
            *v = f64::from_le_bytes(buf);
        }
        tensors.insert(name, Tensor::new(shape, data)?);
    }

    // Split extras off before constructing weights.
    let param_names: std::collections::BTreeSet<String> =
        super::weights::param_specs(&config).into_iter().map(|(n, _)| n).collect();
    let mut params = BTreeMap::new();
    let mut extras = BTreeMap::new();
    for (name, t) in tensors {
        if param_names.contains(&name) {
            params.insert(name, t);
        } else {
            extras.insert(name, t);
        }
    }
    let weights = Weights::from_tensors(config, params)?;
    Ok((weights, extras))
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits_and_extras() {
        let cfg = ModelConfig::desk(32);
        let w = Weights::init(cfg, 42).unwrap();
        let mut extra = BTreeMap::new();
        extra.insert(
            "postfix".to_string(),
            Tensor::matrix(3, cfg.dim, vec![0.25; 3 * cfg.dim]).unwrap(),
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.synt");
        save_checkpoint(&path, &w, &extra).unwrap();
        let (loaded, extras) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.checksum(), w.checksum());
        assert_eq!(extras["postfix"].data(), extra["postfix"].data());
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.synt");
        std::fs::write(&path, b"NOPEnope").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
