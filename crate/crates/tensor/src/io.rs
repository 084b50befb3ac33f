//! State-dict persistence in the safetensors format.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::IxDyn;
use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

use crate::error::{Result, TensorError};
use crate::graph::Tensor;

/// Serializes tensors as little-endian `F64`.
pub fn to_safetensors_bytes(state: &BTreeMap<String, Tensor>) -> Result<Vec<u8>> {
    let buffers: Vec<(String, Vec<usize>, Vec<u8>)> = state
        .iter()
        .map(|(name, t)| {
            let bytes = t
                .as_standard_layout()
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect();
            (name.clone(), t.shape().to_vec(), bytes)
        })
        .collect();
    let views = buffers
        .iter()
        .map(|(name, shape, bytes)| Ok((name.as_str(), TensorView::new(Dtype::F64, shape.clone(), bytes)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(safetensors::serialize(views, None)?)
}

/// Parses a safetensors buffer; `F32` and `F64` tensors are widened to `f64`.
pub fn from_safetensors_bytes(bytes: &[u8]) -> Result<BTreeMap<String, Tensor>> {
    let st = SafeTensors::deserialize(bytes)?;
    let mut out = BTreeMap::new();
    for (name, view) in st.tensors() {
        let data = view.data();
        let values: Vec<f64> = match view.dtype() {
            Dtype::F64 => data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
            Dtype::F32 => data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            // Integer counters such as `num_batches_tracked` carry no weights.
            Dtype::I64 | Dtype::I32 => continue,
            other => {
                return Err(TensorError::Dtype {
                    name,
                    dtype: format!("{other:?}"),
                })
            }
        };
        let t = Tensor::from_shape_vec(IxDyn(view.shape()), values).map_err(|e| TensorError::Shape {
            op: "safetensors",
            detail: format!("{name}: {e}"),
        })?;
        out.insert(name, t);
    }
    Ok(out)
}

pub fn save_safetensors(path: &Path, state: &BTreeMap<String, Tensor>) -> Result<()> {
    let bytes = to_safetensors_bytes(state)?;
    std::fs::write(path, bytes).map_err(|source| TensorError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_safetensors(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let bytes = std::fs::read(path).map_err(|source| TensorError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_safetensors_bytes(&bytes)
}
