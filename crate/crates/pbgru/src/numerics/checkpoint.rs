//! Checkpoint files: a flat JSON map from parameter name to shape and 64-bit
//! values. Keys are sorted, and floats use the shortest round-trip encoding,
//! so identical parameters serialize to identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::params::ParamSet;

#[derive(Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    params: BTreeMap<String, CheckpointEntry>,
}

const FORMAT: &str = "pbgru-checkpoint-v1";

pub fn save_checkpoint(path: &Path, params: &ParamSet) -> Result<()> {
    let mut map = BTreeMap::new();
    for (name, tensor) in params.iter() {
        map.insert(
            name.to_string(),
            CheckpointEntry {
                shape: tensor.shape(),
                values: tensor.values(),
            },
        );
    }
    let file = CheckpointFile {
        format: FORMAT.to_string(),
        params: map,
    };
    let json = serde_json::to_string(&file)
        .map_err(|e| Error::data(format!("checkpoint serialization: {e}")))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<BTreeMap<String, (Vec<usize>, Vec<f64>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_str(&text)
        .map_err(|e| Error::data(format!("{}: malformed checkpoint: {e}", path.display())))?;
    if file.format != FORMAT {
        return Err(Error::data(format!(
            "{}: unknown checkpoint format {:?}",
            path.display(),
            file.format
        )));
    }
    let mut out = BTreeMap::new();
    for (name, entry) in file.params {
        let numel: usize = entry.shape.iter().product();
        if numel != entry.values.len() {
            return Err(Error::data(format!(
                "checkpoint parameter {name}: shape {:?} does not match {} values",
                entry.shape,
                entry.values.len()
            )));
        }
        if !entry.values.iter().all(|v| v.is_finite()) {
            return Err(Error::data(format!(
                "checkpoint parameter {name} contains non-finite values"
            )));
        }
        out.insert(name, (entry.shape, entry.values));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;

    #[test]
    fn round_trip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut ps = ParamSet::new();
        ps.add(
            "layer.w",
            Tensor::param(&[2, 2], vec![0.1, -0.25, 1.0 / 3.0, 2e-17]).unwrap(),
        )
        .unwrap();
        ps.add("layer.b", Tensor::param(&[2], vec![0.0, -0.0]).unwrap())
            .unwrap();
        save_checkpoint(&path, &ps).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let (shape, values) = &loaded["layer.w"];
        assert_eq!(shape, &vec![2, 2]);
        for (a, b) in values.iter().zip(ps.get("layer.w").unwrap().values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // writing again produces identical bytes
        let bytes1 = std::fs::read(&path).unwrap();
        save_checkpoint(&path, &ps).unwrap();
        let bytes2 = std::fs::read(&path).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn mismatched_load_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut ps = ParamSet::new();
        ps.add_zeros("w", &[2]).unwrap();
        save_checkpoint(&path, &ps).unwrap();
        let loaded = load_checkpoint(&path).unwrap();

        let mut other_shape = ParamSet::new();
        other_shape.add_zeros("w", &[3]).unwrap();
        assert!(other_shape.load_values(&loaded).is_err());

        let mut other_name = ParamSet::new();
        other_name.add_zeros("v", &[2]).unwrap();
        assert!(other_name.load_values(&loaded).is_err());
    }
}
