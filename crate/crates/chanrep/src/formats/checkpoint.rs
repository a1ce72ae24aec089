//! Parameter checkpoints: a flat little-endian `f32` blob (`.bin`) plus a
//! JSON manifest (`.json`) listing each tensor's name, shape and byte offset
//! along with free-form metadata.

use std::path::{Path, PathBuf};

use chanrep_core::nn::ParamStore;
use serde::{Deserialize, Serialize};

use crate::error::{read, read_json, write, write_json, HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub tensors: Vec<TensorRecord>,
    pub meta: serde_json::Value,
}

pub fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

pub fn save(stem: &Path, store: &ParamStore, meta: serde_json::Value) -> Result<()> {
    let (bin, json) = paths(stem);
    let mut blob = Vec::with_capacity(4 * store.numel());
    let mut tensors = Vec::with_capacity(store.len());
    for (name, m) in store.iter() {
        tensors.push(TensorRecord { name: name.to_string(), shape: [m.rows(), m.cols()], offset: blob.len() });
        for v in m.as_slice() {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    write(&bin, &blob)?;
    write_json(&json, &Manifest { format: "chanrep-f32-1".into(), tensors, meta })
}

/// Read the manifest only.
pub fn manifest(stem: &Path) -> Result<Manifest> {
    read_json(&paths(stem).1)
}

/// Fill every parameter of `store` from the checkpoint at `stem`, matching by
/// name and shape. Returns the manifest metadata.
pub fn load_into(stem: &Path, store: &mut ParamStore) -> Result<serde_json::Value> {
    let (bin, json) = paths(stem);
    let man: Manifest = read_json(&json)?;
    let blob = read(&bin)?;
    let ids: Vec<_> = store.ids().collect();
    if man.tensors.len() != ids.len() {
        return Err(HarnessError::format(&json, format!("{} tensors, model has {}", man.tensors.len(), ids.len())));
    }
    for id in ids {
        let name = store.name(id).to_string();
        let rec = man
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| HarnessError::format(&json, format!("tensor {name} missing")))?;
        let m = store.get_mut(id);
        if rec.shape != [m.rows(), m.cols()] {
            return Err(HarnessError::format(&json, format!("tensor {name} has shape {:?}, model expects {:?}", rec.shape, m.shape())));
        }
        let bytes = blob
            .get(rec.offset..rec.offset + 4 * m.len())
            .ok_or_else(|| HarnessError::format(&bin, format!("tensor {name} runs past the end of the blob")))?;
        for (dst, src) in m.as_mut_slice().iter_mut().zip(bytes.chunks_exact(4)) {
            *dst = f32::from_le_bytes(src.try_into().unwrap()) as f64;
        }
    }
    Ok(man.meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chanrep_core::nn::Mat;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a.w", Mat::from_fn(2, 3, |r, c| (r * 3 + c) as f64 * 0.5 - 1.0));
        s.add("a.b", Mat::from_fn(1, 3, |_, c| c as f64 + 0.25));
        s
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ck");
        let s = store();
        save(&stem, &s, serde_json::json!({"kind": "test"})).unwrap();
        let man = manifest(&stem).unwrap();
        assert_eq!(man.tensors[1].offset, 24);
        assert_eq!(man.tensors[0].shape, [2, 3]);
        let mut z = store();
        for id in z.ids().collect::<Vec<_>>() {
            z.get_mut(id).as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        }
        let meta = load_into(&stem, &mut z).unwrap();
        assert_eq!(meta["kind"], "test");
        assert_eq!(z, s);
    }

    #[test]
    fn mismatches() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ck");
        save(&stem, &store(), serde_json::Value::Null).unwrap();
        let mut other = ParamStore::new();
        other.add("a.w", Mat::zeros(3, 2));
        other.add("a.b", Mat::zeros(1, 3));
        assert!(matches!(load_into(&stem, &mut other), Err(HarnessError::Format { .. })));
        let mut fewer = ParamStore::new();
        fewer.add("a.w", Mat::zeros(2, 3));
        assert!(load_into(&stem, &mut fewer).is_err());
        let mut s = store();
        assert_eq!(load_into(&dir.path().join("nope"), &mut s).unwrap_err().exit_code(), 3);
    }
}
