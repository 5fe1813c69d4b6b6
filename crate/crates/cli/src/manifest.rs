//! Per-run manifest: what was run, with which effective configuration, on
//! which inputs, producing which files. Paths of artifacts are relative to
//! the output directory and no timestamps are recorded.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    /// Effective configuration after defaults and overrides.
    pub config: serde_json::Value,
    /// Command arguments as parsed.
    pub arguments: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub artifacts: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

impl RunManifest {
    pub fn new(
        command: &str,
        seed: u64,
        config: &impl Serialize,
        arguments: &impl Serialize,
    ) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        let config_sha256 = sha256_hex(serde_json::to_string(&config)?.as_bytes());
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config_sha256,
            config,
            arguments: serde_json::to_value(arguments)?,
            inputs: Vec::new(),
            artifacts: Vec::new(),
        })
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: file_digest(path)?,
        });
        Ok(())
    }

    /// Records every artifact, sorted by path, relative to `out_dir`.
    pub fn add_artifacts(&mut self, out_dir: &Path, paths: &[PathBuf]) -> Result<()> {
        for path in paths {
            let rel = path.strip_prefix(out_dir).unwrap_or(path);
            self.artifacts.push(FileDigest {
                path: rel.display().to_string(),
                sha256: file_digest(path)?,
            });
        }
        self.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        self.artifacts.dedup();
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid manifest {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("a.csv");
        std::fs::write(&file, "x\n").unwrap();
        let mut m = RunManifest::new(
            "synth",
            7,
            &serde_json::json!({"k": 1}),
            &serde_json::json!({}),
        )
        .unwrap();
        m.add_artifacts(dir.path(), &[file.clone(), file]).unwrap();
        assert_eq!(m.artifacts.len(), 1);
        assert_eq!(m.artifacts[0].path, "a.csv");
        let path = m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::load(&path).unwrap(), m);
    }
}
