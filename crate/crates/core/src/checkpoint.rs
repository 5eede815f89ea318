//! Model checkpoints.
//!
//! Layout: one line of JSON, a `\n`, then every parameter's values as
//! little-endian `f64`, concatenated in header order.
//!
//! ```json
//! {"format": "hrt-checkpoint-v1",
//!  "config": { ...ModelConfig... },
//!  "vocab": ["<pad-unused>", "<unk>", ...],
//!  "params": [{"name": "embedding", "shape": [V, d_emb]}, ...]}
//! ```
//!
//! Parameter names are the role names used at registration
//! (`encoder.block0.attn.h1.Wq`, `matching.b_co`, `pool.w`, …).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::Model;

pub const FORMAT: &str = "hrt-checkpoint-v1";

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    config: ModelConfig,
    vocab: Vec<String>,
    params: Vec<ParamEntry>,
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let header = Header {
        format: FORMAT.to_string(),
        config: model.config.clone(),
        vocab: model.vocab.tokens().to_vec(),
        params: model
            .params
            .store
            .iter()
            .map(|(_, name, t)| ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    for (_, _, t) in model.params.store.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..nl])?;
    if header.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {}", header.format)));
    }
    let vocab = Vocabulary::from_tokens(header.vocab)?;
    let mut model = Model::new(header.config, vocab)?;
    let store = &mut model.params.store;
    if header.params.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} parameters, model expects {}",
            header.params.len(),
            store.len()
        )));
    }

    let mut body = &bytes[nl + 1..];
    for entry in &header.params {
        let id = store
            .id(&entry.name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter {}", entry.name)))?;
        let t = store.get_mut(id);
        if t.shape() != entry.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "{}: shape {:?}, expected {:?}",
                entry.name,
                entry.shape,
                t.shape()
            )));
        }
        let n = t.len() * 8;
        if body.len() < n {
            return Err(Error::Checkpoint(format!("{}: truncated values", entry.name)));
        }
        for (dst, chunk) in t.data_mut().iter_mut().zip(body[..n].chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        body = &body[n..];
    }
    if !body.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", body.len())));
    }
    Ok(model)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    from_bytes(&fs::read(path)?)
}
