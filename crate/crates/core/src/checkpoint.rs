//! Binary checkpoints of the best weights.
//!
//! Layout: the magic `SEGMICRO1`, a little-endian `u64` header length, a JSON
//! header (model config, optimizer kind, epoch, validation loss and a tensor
//! directory of names, shapes and byte offsets), then every tensor as
//! little-endian `f32` in directory order. Writes go to a temporary file that
//! is renamed into place.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{data_err, Error, Result};
use crate::net::{build, Graph, ModelConfig};
use crate::optim::OptimizerKind;

pub const CHECKPOINT_MAGIC: &[u8; 9] = b"SEGMICRO1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub optimizer: Option<OptimizerKind>,
    pub epoch: usize,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub meta: CheckpointMeta,
    pub tensors: Vec<TensorEntry>,
}

fn directory(graph: &Graph<f32>) -> (Vec<TensorEntry>, Vec<&[f32]>) {
    let mut entries = Vec::new();
    let mut data = Vec::new();
    let mut offset = 0;
    for l in graph.layers() {
        let k = &l.params.kernel;
        for (suffix, shape, values) in [
            ("kernel", k.shape().dims().to_vec(), k.data()),
            ("bias", vec![l.params.bias.len()], l.params.bias.as_slice()),
        ] {
            entries.push(TensorEntry {
                name: format!("{}.{suffix}", l.name),
                shape,
                offset,
            });
            offset += values.len() * 4;
            data.push(values);
        }
    }
    (entries, data)
}

/// Serializes a graph's parameters to bytes.
pub fn encode_checkpoint(graph: &Graph<f32>, meta: &CheckpointMeta) -> Vec<u8> {
    let (tensors, data) = directory(graph);
    let header = CheckpointHeader {
        config: graph.config().clone(),
        meta: meta.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let payload_len: usize = data.iter().map(|d| d.len() * 4).sum();
    let mut out = Vec::with_capacity(CHECKPOINT_MAGIC.len() + 8 + json.len() + payload_len);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for values in data {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Writes a checkpoint atomically.
pub fn save_checkpoint(path: &Path, graph: &Graph<f32>, meta: &CheckpointMeta) -> Result<()> {
    let tmp = temp_path(path);
    fs::write(&tmp, encode_checkpoint(graph, meta)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Rebuilds a graph from checkpoint bytes, validating every tensor.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Graph<f32>, CheckpointHeader)> {
    let rest = bytes
        .strip_prefix(CHECKPOINT_MAGIC.as_slice())
        .ok_or_else(|| data_err!("not a checkpoint: bad magic"))?;
    if rest.len() < 8 {
        return Err(data_err!("checkpoint truncated in header length"));
    }
    let header_len = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
    let rest = &rest[8..];
    if rest.len() < header_len {
        return Err(data_err!("checkpoint truncated in header"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&rest[..header_len]).map_err(|e| data_err!("checkpoint header: {e}"))?;
    let payload = &rest[header_len..];

    let mut graph: Graph<f32> = build(&header.config, 0)?;
    let (expected, _) = directory(&graph);
    if expected.len() != header.tensors.len() {
        return Err(data_err!(
            "checkpoint lists {} tensors, model has {}",
            header.tensors.len(),
            expected.len()
        ));
    }
    for (want, got) in expected.iter().zip(&header.tensors) {
        if want != got {
            return Err(data_err!(
                "checkpoint tensor {} {:?} at byte {} does not match model tensor {} {:?} at byte {}",
                got.name,
                got.shape,
                got.offset,
                want.name,
                want.shape,
                want.offset
            ));
        }
    }
    let needed = 4 * graph.param_count();
    if payload.len() != needed {
        return Err(data_err!("checkpoint payload has {} bytes, expected {needed}", payload.len()));
    }
    let mut floats = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")));
    for slice in graph.param_slices_mut() {
        for (dst, src) in slice.iter_mut().zip(&mut floats) {
            *dst = src;
        }
    }
    Ok((graph, header))
}

pub fn load_checkpoint(path: &Path) -> Result<(Graph<f32>, CheckpointHeader)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| data_err!("{}: {e}", path.display()))
}
