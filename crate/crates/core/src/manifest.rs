//! Run manifests: what went in, what came out, and how long it took.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub threads: usize,
    /// Input name to sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output file (relative to the output directory) to sha256.
    pub artifacts: BTreeMap<String, String>,
    /// Seconds per phase; the only field that varies between identical runs.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: Vec<String>, config: serde_json::Value, seed: u64) -> Self {
        Self {
            command,
            config,
            seed,
            threads: rayon::current_num_threads(),
            ..Self::default()
        }
    }

    pub fn add_input(&mut self, name: impl Into<String>, path: &Path) -> io::Result<()> {
        self.inputs.insert(name.into(), sha256_file(path)?);
        Ok(())
    }

    /// Hashes every regular file under `dir` except the manifest itself.
    pub fn hash_artifacts(&mut self, dir: &Path) -> io::Result<()> {
        self.artifacts.clear();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in fs::read_dir(&d)? {
                let path = entry?.path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    let rel = path.strip_prefix(dir).expect("under dir").to_string_lossy().replace('\\', "/");
                    if rel != MANIFEST_FILE {
                        self.artifacts.insert(rel, sha256_file(&path)?);
                    }
                }
            }
        }
        Ok(())
    }

    /// Digest of the artifact hashes alone.
    pub fn artifact_digest(&self) -> String {
        let joined: String = self.artifacts.iter().map(|(k, v)| format!("{k}\t{v}\n")).collect();
        sha256_hex(joined.as_bytes())
    }

    pub fn write(&self, dir: &Path) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(dir.join(MANIFEST_FILE), text)
    }

    pub fn load(dir: &Path) -> io::Result<Self> {
        serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}
