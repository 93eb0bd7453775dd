//! Binary checkpoint container.
//!
//! Layout: the magic bytes `VHREDCKP`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a UTF-8 JSON header, then every
//! parameter's values as little-endian `f64` in header order. The header
//! holds the architecture, the vocabulary (if any), the RNG state and the
//! name and shape of each parameter.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelBundle, ModelConfig};
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::tensor::HasParams;

const MAGIC: &[u8; 8] = b"VHREDCKP";
const VERSION: u32 = 1;

/// Where a run's random streams stand: the run seed and the number of
/// training batches consumed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub batches: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Option<Vocabulary>,
    rng: RngState,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn write_checkpoint(out: &mut impl Write, model: &ModelBundle, rng: RngState) -> Result<()> {
    let header = Header {
        config: model.config().clone(),
        vocab: model.vocab().cloned(),
        rng,
        params: model
            .params()
            .iter()
            .map(|(_, name, t)| ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("encoding header: {e}")))?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for (_, _, t) in model.params().iter() {
        let bytes: Vec<u8> = t.values().iter().flat_map(|v| v.to_le_bytes()).collect();
        out.write_all(&bytes)?;
    }
    Ok(())
}

pub fn read_checkpoint(input: &mut impl Read) -> Result<(ModelBundle, RngState)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    input.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)
        .map_err(|e| Error::Checkpoint(format!("decoding header: {e}")))?;

    let mut model = ModelBundle::new(header.config, 0)?;
    if let Some(mut vocab) = header.vocab {
        vocab.rebuild_index();
        model = model.with_vocab(vocab)?;
    }
    if header.params.len() != model.params().len() {
        return Err(Error::Checkpoint(format!(
            "{} parameters stored, architecture has {}",
            header.params.len(),
            model.params().len()
        )));
    }
    for entry in &header.params {
        let t = model
            .params_mut()
            .by_name_mut(&entry.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{}`", entry.name)))?;
        if t.shape() != entry.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "parameter `{}` has shape {:?}, expected {:?}",
                entry.name,
                entry.shape,
                t.shape()
            )));
        }
        let mut raw = vec![0u8; 8 * t.len()];
        input.read_exact(&mut raw)?;
        for (dst, chunk) in t.values_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    }
    Ok((model, header.rng))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &ModelBundle, rng: RngState) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, model, rng)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelBundle, RngState)> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&mut bytes.as_slice())
}
