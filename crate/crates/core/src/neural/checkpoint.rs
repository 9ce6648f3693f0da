//! Parameter serialization: named arrays as little-endian f32 with a JSON
//! table of names, shapes and offsets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::params::ParamStore;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("parameter table mismatch: {0}")]
    Layout(String),
    #[error("config hash mismatch: checkpoint {found}, environment {expected}")]
    ConfigHash { expected: String, found: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Offset in f32 elements.
    pub offset: usize,
}

pub fn encode_params(store: &ParamStore) -> (Vec<TensorEntry>, Vec<u8>) {
    let mut table = Vec::with_capacity(store.len());
    let mut bytes = Vec::with_capacity(store.n_scalars() * 4);
    let mut offset = 0;
    for (_, name, m) in store.iter() {
        table.push(TensorEntry {
            name: name.to_string(),
            rows: m.rows,
            cols: m.cols,
            offset,
        });
        for &v in &m.data {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        offset += m.data.len();
    }
    (table, bytes)
}

/// Overwrite `store` from an encoded table. Names and shapes must match the
/// store's layout exactly.
pub fn decode_params_into(
    store: &mut ParamStore,
    table: &[TensorEntry],
    bytes: &[u8],
) -> Result<(), CheckpointError> {
    if table.len() != store.len() {
        return Err(CheckpointError::Layout(format!(
            "{} tensors in file, {} expected",
            table.len(),
            store.len()
        )));
    }
    let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
    for (entry, id) in table.iter().zip(ids) {
        let name = store.name(id).to_string();
        let m = store.get_mut(id);
        if entry.name != name || entry.rows != m.rows || entry.cols != m.cols {
            return Err(CheckpointError::Layout(format!(
                "{} {}x{} vs {} {}x{}",
                entry.name, entry.rows, entry.cols, name, m.rows, m.cols
            )));
        }
        let start = entry.offset * 4;
        let end = start + m.data.len() * 4;
        let chunk = bytes.get(start..end).ok_or_else(|| {
            CheckpointError::Layout(format!("{} runs past end of data", entry.name))
        })?;
        for (v, b) in m.data.iter_mut().zip(chunk.chunks_exact(4)) {
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
        }
    }
    Ok(())
}

/// Round every parameter to f32 so in-memory values equal a reloaded file.
pub fn round_to_f32(store: &mut ParamStore) {
    for m in store.values_mut() {
        for v in &mut m.data {
            *v = *v as f32 as f64;
        }
    }
}
