//! Run manifests: every command writes one JSON manifest echoing the fully
//! resolved configuration, the content hashes of its inputs, and the names
//! of every artifact it produced.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::table::{write_atomic, TableError};

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    /// Fully resolved configuration echo.
    pub config: serde_json::Value,
    pub inputs: Vec<InputRecord>,
    /// File names (relative to the manifest) of every produced artifact.
    pub outputs: Vec<String>,
    /// Content hashes of produced data files (for runs like `gen` whose
    /// artifact is itself the dataset of record).
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub output_hashes: Vec<InputRecord>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        RunManifest {
            tool: "copula-pde",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            output_hashes: Vec::new(),
        }
    }

    fn hash_file(path: &Path) -> Result<InputRecord, TableError> {
        let bytes = fs::read(path).map_err(|source| TableError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        Ok(InputRecord {
            name: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
            sha256: hex_string(&hasher.finalize()),
        })
    }

    /// Hash a file's bytes and record it under its file name.
    pub fn record_input(&mut self, path: &Path) -> Result<(), TableError> {
        let record = Self::hash_file(path)?;
        self.inputs.push(record);
        Ok(())
    }

    /// Record a produced data file together with its content hash.
    pub fn record_hashed_output(&mut self, path: &Path) -> Result<(), TableError> {
        let record = Self::hash_file(path)?;
        if !self.outputs.contains(&record.name) {
            self.outputs.push(record.name.clone());
        }
        self.output_hashes.push(record);
        Ok(())
    }

    pub fn record_output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    /// Write the manifest itself (the manifest lists it too, so no artifact
    /// is orphaned).
    pub fn write(&mut self, path: &Path) -> Result<(), TableError> {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        if !self.outputs.contains(&name) {
            self.outputs.push(name);
        }
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(path, json.as_bytes())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    #[test]
    fn manifest_hashes_inputs_and_lists_outputs() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"date,A\n2020-01-01,0.01\n").unwrap();
        let mut m = RunManifest::new("residuals", serde_json::json!({"k": 5.0}));
        m.record_input(f.path()).unwrap();
        m.record_output("pairs.csv");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        m.write(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
        assert!(v["outputs"]
            .as_array()
            .unwrap()
            .iter()
            .any(|o| o == "pairs.csv"));
        assert!(v["outputs"]
            .as_array()
            .unwrap()
            .iter()
            .any(|o| o == "manifest.json"));
    }
}
