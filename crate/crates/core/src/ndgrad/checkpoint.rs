//! Parameter checkpoints: one `WSF1` file per parameter plus `index.json`
//! mapping each name to its file and shape.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::io::{read_json, read_wsf, write_json, write_wsf};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub file: String,
    pub shape: Vec<usize>,
}

fn file_name(param: &str) -> String {
    let safe: String = param.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect();
    format!("{safe}.wsf")
}

pub fn save_params(dir: &Path, params: &ParamSet<f32>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut index = BTreeMap::new();
    for (name, t) in params.iter() {
        let file = file_name(name);
        write_wsf(&dir.join(&file), t.shape(), t.data())?;
        index.insert(name.clone(), IndexEntry { file, shape: t.shape().to_vec() });
    }
    write_json(&dir.join("index.json"), &index)
}

pub fn load_params(dir: &Path) -> Result<ParamSet<f32>> {
    let index: BTreeMap<String, IndexEntry> = read_json(&dir.join("index.json"))?;
    let mut params = ParamSet::new();
    for (name, entry) in index {
        let path = dir.join(&entry.file);
        let (dims, data) = read_wsf(&path)?;
        if dims != entry.shape {
            return Err(Error::Format {
                path: path.display().to_string(),
                message: format!("index says {:?}, file holds {dims:?}", entry.shape),
            });
        }
        params.insert(name, Tensor::new(dims, data)?);
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndgrad::xavier_init;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = ParamSet::new();
        p.insert("enc.b1.w", xavier_init(&[8, 3, 3, 3], 1));
        p.insert("enc.b1.b", Tensor::zeros(&[8]));
        save_params(dir.path(), &p).unwrap();
        assert_eq!(load_params(dir.path()).unwrap(), p);
        let index = std::fs::read_to_string(dir.path().join("index.json")).unwrap();
        assert!(index.contains("\"enc.b1.w\"") && index.contains("\"shape\""));
    }
}
