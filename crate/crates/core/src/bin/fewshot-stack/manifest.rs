use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use fewshot_stack::Result;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let data = fs::read(path)?;
        Ok(Self {
            path: path.display().to_string(),
            bytes: data.len() as u64,
            sha256: hex::encode(Sha256::digest(&data)),
        })
    }
}

/// Written next to every run's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub config: Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_at: String,
    pub finished_at: String,
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn new(command: &'static str, seed: u64, config: Value, inputs: &[PathBuf], started_at: String) -> Result<Self> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config,
            inputs: inputs.iter().map(|p| FileDigest::of(p)).collect::<Result<_>>()?,
            outputs: Vec::new(),
            started_at,
            finished_at: String::new(),
        })
    }

    /// Digests `outputs`, stamps the end time and writes `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path, outputs: &[PathBuf]) -> Result<PathBuf> {
        self.outputs = outputs.iter().map(|p| FileDigest::of(p)).collect::<Result<_>>()?;
        self.finished_at = now();
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}
