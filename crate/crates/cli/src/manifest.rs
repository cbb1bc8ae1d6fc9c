//! Run manifest: the resolved configuration, tool version, timestamps, and
//! a checksum for every emitted file. Written atomically after all other
//! outputs so a manifest on disk always describes a complete run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub command: String,
    /// Wall-clock stamps; everything else in the run directory is
    /// byte-reproducible for a fixed config and seed.
    pub created_unix_ms: u128,
    pub created_utc: String,
    pub master_seed: u64,
    pub n_pulses: u64,
    pub config: serde_json::Value,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stats: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<serde_json::Value>,
    pub outputs: Vec<OutputFile>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        cfg: &photonbuf::ExperimentConfig,
    ) -> anyhow::Result<Self> {
        let now = chrono::Utc::now();
        Ok(Self {
            tool: "photonbuf",
            tool_version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            created_unix_ms: now.timestamp_millis() as u128,
            created_utc: now.to_rfc3339(),
            master_seed: cfg.master_seed,
            n_pulses: cfg.n_pulses,
            config: serde_json::to_value(cfg)?,
            warnings: Vec::new(),
            stats: None,
            sweep: None,
            outputs: Vec::new(),
        })
    }
}

/// Writes run outputs and finishes with an atomic manifest.
pub struct RunWriter {
    dir: PathBuf,
    manifest: RunManifest,
}

impl RunWriter {
    pub fn new(dir: &Path, manifest: RunManifest) -> anyhow::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    /// Writes one output file and records its checksum.
    pub fn emit(&mut self, name: &str, contents: &str) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents)?;
        let digest = Sha256::digest(contents.as_bytes());
        self.manifest.outputs.push(OutputFile {
            path: name.to_string(),
            bytes: contents.len() as u64,
            sha256: hex::encode(digest),
        });
        Ok(())
    }

    /// Writes `manifest.json` via a temp file and rename.
    pub fn finish(self) -> anyhow::Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        let tmp = self.dir.join("manifest.json.tmp");
        let path = self.dir.join("manifest.json");
        fs::write(&tmp, &text)?;
        fs::rename(&tmp, &path)?;
        Ok(path)
    }
}
