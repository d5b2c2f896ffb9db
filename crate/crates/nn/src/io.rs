//! Weight files are safetensors archives (little-endian `f32`, one tensor per
//! parameter name) so they can be inspected or produced by other toolchains.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::error::{NnError, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub fn to_bytes(set: &ParamSet, metadata: Option<HashMap<String, String>>) -> Result<Vec<u8>> {
    let raw: Vec<(String, Vec<usize>, Vec<u8>)> = set
        .entries()
        .iter()
        .map(|e| {
            let bytes = e.value.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            (e.name.clone(), e.value.shape().to_vec(), bytes)
        })
        .collect();
    let views = raw
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(Dtype::F32, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| NnError::Format(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    safetensors::serialize(views, &metadata).map_err(|e| NnError::Format(e.to_string()))
}

/// Reads every tensor of a safetensors archive.
pub fn read_tensors(bytes: &[u8]) -> Result<HashMap<String, Tensor>> {
    let st = SafeTensors::deserialize(bytes).map_err(|e| NnError::Format(e.to_string()))?;
    let mut out = HashMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F32 {
            return Err(NnError::Format(format!("{name}: expected F32, found {:?}", view.dtype())));
        }
        let data = view.data().chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        out.insert(name, Tensor::new(view.shape(), data)?);
    }
    Ok(out)
}

/// Overwrites every entry of `set` with the same-named tensor from `bytes`.
pub fn load_bytes_into(set: &mut ParamSet, bytes: &[u8]) -> Result<()> {
    let mut tensors = read_tensors(bytes)?;
    for entry in set.entries_mut() {
        let t = tensors.remove(&entry.name).ok_or_else(|| NnError::MissingParam(entry.name.clone()))?;
        if t.shape() != entry.value.shape() {
            return Err(NnError::ShapeMismatch(format!(
                "{}: file has {:?}, model expects {:?}",
                entry.name,
                t.shape(),
                entry.value.shape()
            )));
        }
        entry.value = t;
    }
    Ok(())
}

/// Writes to a sibling temporary file and renames it into place.
pub fn save(set: &ParamSet, path: &Path, metadata: Option<HashMap<String, String>>) -> Result<()> {
    let bytes = to_bytes(set, metadata)?;
    write_atomic(path, &bytes)
}

pub fn load_into(set: &mut ParamSet, path: &Path) -> Result<()> {
    let bytes = fs::read(path)?;
    load_bytes_into(set, &bytes)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("weights");
    let tmp = path.with_file_name(format!(".{file_name}.tmp-{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
