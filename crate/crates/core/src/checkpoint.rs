//! Model checkpoints.
//!
//! Layout, little-endian: `b"ACTK"`, `u16` version, `u32` header length, a
//! JSON header (model configuration, config hash, parameter names), then for
//! every parameter a `u16` name length, the UTF-8 name, a `u32` byte length
//! and the parameter as a tensor file. Sketch tables are not stored; they are
//! regenerated from the recorded seed and dimensions.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{decode_tensor, encode_tensor, write_atomic};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::scalar::Scalar;

pub const MAGIC: [u8; 4] = *b"ACTK";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    /// Hash of the experiment configuration that produced the weights.
    pub config_hash: String,
    pub names: Vec<String>,
}

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset,
        msg: msg.into(),
    }
}

pub fn encode_checkpoint<T: Scalar>(model: &ModelParams<T>, config_hash: &str) -> Result<Vec<u8>> {
    let tensors = model.tensors();
    let header = CheckpointHeader {
        model: model.config.clone(),
        config_hash: config_hash.to_string(),
        names: tensors.iter().map(|(n, _, _)| n.clone()).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Internal(e.to_string()))?;
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (name, _, t) in &tensors {
        let body = encode_tensor(t)?;
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(body.len() as u32).to_le_bytes());
        out.extend_from_slice(&body);
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(format_err(self.bytes.len(), format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses a checkpoint and rebuilds the model it describes.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<(ModelParams<T>, CheckpointHeader)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(format_err(0, "bad magic, expected \"ACTK\""));
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(format_err(4, format!("unsupported checkpoint version {version}")));
    }
    let len = c.u32("header length")? as usize;
    let at = c.pos;
    let header: CheckpointHeader = serde_json::from_slice(c.take(len, "header")?)
        .map_err(|e| format_err(at, format!("bad header: {e}")))?;
    let mut model = ModelParams::<T>::init(header.model.clone())?;
    let expected = model.names();
    if expected != header.names {
        return Err(format_err(at, "parameter list does not match the recorded configuration"));
    }
    let mut loaded = Vec::with_capacity(expected.len());
    for name in &expected {
        let at = c.pos;
        let n = c.u16("name length")? as usize;
        let found = c.take(n, "name")?;
        if found != name.as_bytes() {
            return Err(format_err(at, format!("expected parameter {name}")));
        }
        let n = c.u32("tensor length")? as usize;
        let at = c.pos;
        let t = decode_tensor::<T>(c.take(n, "tensor")?).map_err(|e| match e {
            Error::Format { offset, msg } => format_err(at + offset, format!("{name}: {msg}")),
            other => other,
        })?;
        loaded.push((at, t));
    }
    if c.pos != bytes.len() {
        return Err(format_err(c.pos, "trailing bytes"));
    }
    let mut err = None;
    let mut it = loaded.into_iter();
    model.visit_mut(&mut |name, _, slot| {
        let (at, t) = it.next().expect("one tensor per name");
        if t.dims() != slot.dims() && err.is_none() {
            err = Some(format_err(at, format!("{name}: dims {:?}, expected {:?}", t.dims(), slot.dims())));
        }
        *slot = t;
    });
    match err {
        Some(e) => Err(e),
        None => Ok((model, header)),
    }
}

pub fn save_checkpoint<T: Scalar>(path: &Path, model: &ModelParams<T>, config_hash: &str) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model, config_hash)?)
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(ModelParams<T>, CheckpointHeader)> {
    decode_checkpoint(&fs::read(path)?)
}
