//! Binary checkpoints: magic, little-endian u32 header length, a JSON
//! header naming the architecture and filter groups, then every parameter
//! as a little-endian f64.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::net::{Architecture, FilterGroup, Network, Scalar};
use super::Model;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AUGXCKPT";

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: String,
    architecture: Architecture,
    groups: Vec<FilterGroup>,
}

pub fn write_checkpoint<T: Scalar>(model: &Model<T>, mut out: impl Write) -> Result<()> {
    let header = Header {
        version: 1,
        dtype: "f64".into(),
        architecture: model.net.arch().clone(),
        groups: model.net.groups().to_vec(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(12 + json.len() + 8 * model.params.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for v in &model.params {
        buf.extend_from_slice(&v.f64().to_le_bytes());
    }
    out.write_all(&buf)
        .map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn read_checkpoint<T: Scalar>(mut input: impl Read) -> Result<Model<T>> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("missing magic".into()));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(12..12 + len)
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body)?;
    if header.version != 1 || header.dtype != "f64" {
        return Err(Error::Checkpoint(format!(
            "unsupported version {} / dtype {}",
            header.version, header.dtype
        )));
    }
    let net = Network::new(header.architecture)?;
    if net.groups() != header.groups.as_slice() {
        return Err(Error::Checkpoint(
            "filter groups disagree with the architecture".into(),
        ));
    }
    let values = &bytes[12 + len..];
    if values.len() != 8 * net.n_params() {
        return Err(Error::Checkpoint(format!(
            "{} value bytes for {} parameters",
            values.len(),
            net.n_params()
        )));
    }
    let params = values
        .chunks_exact(8)
        .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    Model::new(Arc::new(net), params)
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(f)
}
