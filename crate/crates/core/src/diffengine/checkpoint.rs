//! JSON checkpoint files.
//!
//! ```text
//! {
//!   "magic": "VNEGNN-CKPT-1",
//!   "meta": { ... free-form, e.g. the model configuration ... },
//!   "params": { "<name>": { "shape": [rows, cols], "values": [row-major f64] }, ... }
//! }
//! ```
//!
//! Floats are written in shortest round-trip form, so save/load is lossless.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::params::ParamStore;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "VNEGNN-CKPT-1";

#[derive(Serialize, Deserialize)]
struct Entry {
    shape: (usize, usize),
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    magic: String,
    #[serde(default)]
    meta: serde_json::Value,
    params: BTreeMap<String, Entry>,
}

pub fn checkpoint_to_string(store: &ParamStore, meta: serde_json::Value) -> Result<String> {
    let params = store
        .iter()
        .map(|(name, p)| {
            (
                name.to_string(),
                Entry {
                    shape: p.value.shape(),
                    values: p.value.data().to_vec(),
                },
            )
        })
        .collect();
    let file = File {
        magic: CHECKPOINT_MAGIC.to_string(),
        meta,
        params,
    };
    Ok(serde_json::to_string(&file)?)
}

/// Parse a checkpoint into a fresh store (no optimizer state) and its metadata.
pub fn checkpoint_from_str(text: &str) -> Result<(ParamStore, serde_json::Value)> {
    let file: File =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
    if file.magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint header `{}`, expected `{CHECKPOINT_MAGIC}`",
            file.magic
        )));
    }
    let mut store = ParamStore::new();
    for (name, e) in file.params {
        let m = Matrix::from_vec(e.shape.0, e.shape.1, e.values)
            .map_err(|_| Error::Checkpoint(format!("parameter `{name}` has inconsistent shape")))?;
        store.insert(name, m)?;
    }
    Ok((store, file.meta))
}

pub fn save_checkpoint(path: &Path, store: &ParamStore, meta: serde_json::Value) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(store, meta)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, serde_json::Value)> {
    checkpoint_from_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in proptest::collection::vec(-1e6f64..1e6, 1..24), cols in 1usize..4) {
            let rows = values.len() / cols;
            prop_assume!(rows > 0);
            let m = Matrix::from_vec(rows, cols, values[..rows * cols].to_vec()).unwrap();
            let mut store = ParamStore::new();
            store.insert("a.w0", m.clone()).unwrap();
            store.insert("b", Matrix::scalar(f64::MIN_POSITIVE)).unwrap();
            let text = checkpoint_to_string(&store, serde_json::json!({"k": 1})).unwrap();
            let (back, meta) = checkpoint_from_str(&text).unwrap();
            prop_assert_eq!(back.get("a.w0").unwrap(), &m);
            prop_assert_eq!(back.get("b").unwrap().item().unwrap().to_bits(), f64::MIN_POSITIVE.to_bits());
            prop_assert_eq!(meta["k"].as_i64(), Some(1));
        }
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let text = r#"{"magic":"OTHER","params":{}}"#;
        assert!(matches!(checkpoint_from_str(text), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn inconsistent_shape_is_rejected() {
        let text = r#"{"magic":"VNEGNN-CKPT-1","params":{"p":{"shape":[2,2],"values":[1.0]}}}"#;
        assert!(matches!(checkpoint_from_str(text), Err(Error::Checkpoint(_))));
    }
}
