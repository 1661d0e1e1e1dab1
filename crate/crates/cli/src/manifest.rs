//! Run manifests: what was asked for, on which data, and what came out.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub dataset: Option<PathBuf>,
    pub dataset_sha256: Option<String>,
    pub code_version: &'static str,
    pub started_unix: u64,
    pub wall_clock_secs: Option<f64>,
    pub status: &'static str,
    pub outputs: Vec<PathBuf>,
    #[serde(skip)]
    path: PathBuf,
    #[serde(skip)]
    clock: Option<Instant>,
}

impl RunManifest {
    /// Write the initial manifest into `out_dir` before any work starts.
    pub fn begin(command: &str, out_dir: &Path, config: serde_json::Value, seed: Option<u64>) -> Result<Self> {
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let m = Self {
            command: command.to_owned(),
            argv: std::env::args().collect(),
            config,
            seed,
            dataset: None,
            dataset_sha256: None,
            code_version: env!("CARGO_PKG_VERSION"),
            started_unix,
            wall_clock_secs: None,
            status: "running",
            outputs: Vec::new(),
            path: out_dir.join("manifest.json"),
            clock: Some(Instant::now()),
        };
        m.write()?;
        Ok(m)
    }

    pub fn set_dataset(&mut self, dir: &Path, checksum: String) -> Result<()> {
        self.dataset = Some(dir.to_path_buf());
        self.dataset_sha256 = Some(checksum);
        self.write()
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    pub fn finish(mut self) -> Result<()> {
        self.wall_clock_secs = self.clock.map(|c| c.elapsed().as_secs_f64());
        self.status = "complete";
        self.write()
    }

    fn write(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&self.path, text + "\n").with_context(|| format!("writing {}", self.path.display()))
    }
}

/// SHA-256 over the split files, each prefixed by its name and length so
/// moving bytes between files changes the digest.
pub fn dataset_checksum(paths: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
