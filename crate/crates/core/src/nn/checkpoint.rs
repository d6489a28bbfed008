//! Weight checkpoints.
//!
//! Layout: little-endian `u64` header length, a JSON header listing every
//! layer with the names and shapes of its tensors, then all tensors as
//! contiguous little-endian `f32` in header order. Per layer the trainable
//! parameters come first, then the running statistics.

use super::{NnError, Real, Sequential};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

const FORMAT: &str = "segqc-weights/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsHeader {
    pub format: String,
    pub layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub index: usize,
    pub kind: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

fn header_of<T: Real>(net: &Sequential<T>) -> WeightsHeader {
    let layers = net
        .layers()
        .iter()
        .enumerate()
        .map(|(index, layer)| {
            let mut tensors: Vec<TensorEntry> = layer
                .params()
                .iter()
                .map(|p| TensorEntry { name: p.name.into(), shape: p.value.shape().to_vec() })
                .collect();
            tensors.extend(
                layer.buffers().iter().map(|(name, t)| TensorEntry { name: (*name).into(), shape: t.shape().to_vec() }),
            );
            LayerEntry { index, kind: layer.kind(), tensors }
        })
        .collect();
    WeightsHeader { format: FORMAT.into(), layers }
}

pub fn write_weights<T: Real>(net: &Sequential<T>, mut out: impl Write) -> std::io::Result<()> {
    let header = serde_json::to_vec(&header_of(net)).expect("header serializes");
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    let mut payload = Vec::new();
    for layer in net.layers() {
        let tensors = layer.params().into_iter().map(|p| &p.value).chain(layer.buffers().into_iter().map(|(_, t)| t));
        for t in tensors {
            for v in t.data() {
                payload.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
    }
    out.write_all(&payload)
}

/// Loads weights into `net`, whose architecture must match the header
/// exactly.
pub fn read_weights<T: Real>(net: &mut Sequential<T>, bytes: &[u8]) -> Result<(), NnError> {
    let bad = |msg: String| NnError::Checkpoint(msg);
    if bytes.len() < 8 {
        return Err(bad("file shorter than the length prefix".into()));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let header_bytes = bytes.get(8..8 + hlen).ok_or_else(|| bad(format!("header of {hlen} bytes is truncated")))?;
    let header: WeightsHeader =
        serde_json::from_slice(header_bytes).map_err(|e| bad(format!("malformed header: {e}")))?;
    if header.format != FORMAT {
        return Err(bad(format!("unknown format `{}`", header.format)));
    }
    let expected = header_of(net);
    if header.layers != expected.layers {
        return Err(bad(format!(
            "architecture mismatch: checkpoint has {} layers ({}), network has {} ({})",
            header.layers.len(),
            header.layers.iter().map(|l| l.kind.as_str()).collect::<Vec<_>>().join(","),
            expected.layers.len(),
            expected.layers.iter().map(|l| l.kind.as_str()).collect::<Vec<_>>().join(","),
        )));
    }
    let total: usize = header.layers.iter().flat_map(|l| &l.tensors).map(|t| t.shape.iter().product::<usize>()).sum();
    let payload = &bytes[8 + hlen..];
    if payload.len() != total * 4 {
        return Err(bad(format!("payload holds {} bytes, header needs {}", payload.len(), total * 4)));
    }
    let mut values = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    let mut fill = |data: &mut [T]| {
        for v in data.iter_mut() {
            *v = T::from_f64(values.next().expect("length checked") as f64);
        }
    };
    for layer in net.layers_mut() {
        for p in layer.params_mut() {
            fill(p.value.data_mut());
        }
        for (_, t) in layer.buffers_mut() {
            fill(t.data_mut());
        }
    }
    Ok(())
}

pub fn save_weights<T: Real>(path: impl AsRef<Path>, net: &Sequential<T>) -> Result<(), NnError> {
    let path = path.as_ref();
    let io = |source| NnError::Io { path: path.to_path_buf(), source };
    let mut buf = Vec::new();
    write_weights(net, &mut buf).map_err(io)?;
    std::fs::write(path, buf).map_err(io)
}

pub fn load_weights<T: Real>(path: impl AsRef<Path>, net: &mut Sequential<T>) -> Result<(), NnError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| NnError::Io { path: path.to_path_buf(), source })?;
    read_weights(net, &bytes)
}
