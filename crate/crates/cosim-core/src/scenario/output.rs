//! Run-directory bookkeeping: tracked trace files and the manifest.
//!
//! Every artifact a run produces is registered here; the manifest written
//! at the end carries the config echo, seed, crate version, per-file
//! SHA-256 digests, and scenario metrics, making the directory
//! self-describing for `analyze` and for byte-identity comparisons.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::scenario::ScenarioError;

pub const MANIFEST_NAME: &str = "manifest.json";

pub struct RunDir {
    root: PathBuf,
    files: Vec<String>,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, ScenarioError> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(RunDir {
            root,
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_of(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Open a tracked, buffered file for streaming writes.
    pub fn writer(&mut self, name: &str) -> Result<BufWriter<File>, ScenarioError> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(path)?))
    }

    pub fn write_text(&mut self, name: &str, content: &str) -> Result<(), ScenarioError> {
        let mut w = self.writer(name)?;
        w.write_all(content.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    /// Register a file created outside [`RunDir::writer`] (e.g. the bridge
    /// log) so it is digested into the manifest.
    pub fn track(&mut self, name: &str) {
        self.files.push(name.to_string());
    }

    /// Write the manifest; call last, after every trace is flushed.
    pub fn finalize(
        mut self,
        scenario: &str,
        mode: &str,
        seed: Option<u64>,
        config_echo: serde_json::Value,
        metrics: BTreeMap<String, serde_json::Value>,
    ) -> Result<PathBuf, ScenarioError> {
        self.files.sort();
        self.files.dedup();
        let mut files = BTreeMap::new();
        for name in &self.files {
            let path = self.root.join(name);
            let bytes = std::fs::read(&path)?;
            let digest = Sha256::digest(&bytes);
            files.insert(
                name.clone(),
                serde_json::json!({
                    "sha256": hex_of(&digest),
                    "bytes": bytes.len(),
                }),
            );
        }
        let manifest = serde_json::json!({
            "scenario": scenario,
            "mode": mode,
            "seed": seed,
            "version": env!("CARGO_PKG_VERSION"),
            "config": config_echo,
            "files": files,
            "metrics": metrics,
        });
        let path = self.root.join(MANIFEST_NAME);
        std::fs::write(
            &path,
            format!("{}\n", serde_json::to_string_pretty(&manifest)?),
        )?;
        Ok(path)
    }
}

fn hex_of(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Load and parse a run manifest.
pub fn read_manifest(dir: &Path) -> Result<serde_json::Value, ScenarioError> {
    let path = dir.join(MANIFEST_NAME);
    if !path.exists() {
        return Err(ScenarioError::Runtime(format!(
            "no {MANIFEST_NAME} in {} (is this a run directory?)",
            dir.display()
        )));
    }
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_digests_every_tracked_file() {
        let tmp = tempfile::tempdir().unwrap();
        let mut run = RunDir::create(tmp.path().join("out")).unwrap();
        run.write_text("a.csv", "x,y\n1,2\n").unwrap();
        run.write_text("b.csv", "p\n3\n").unwrap();
        let manifest_path = run
            .finalize(
                "test",
                "virtual",
                Some(7),
                serde_json::json!({}),
                BTreeMap::new(),
            )
            .unwrap();
        let manifest = read_manifest(manifest_path.parent().unwrap()).unwrap();
        assert_eq!(manifest["seed"], 7);
        assert!(manifest["files"]["a.csv"]["sha256"].as_str().unwrap().len() == 64);
        assert_eq!(manifest["files"]["b.csv"]["bytes"], "p\n3\n".len());
    }
}
