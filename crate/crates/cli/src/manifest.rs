//! Run manifests: every numeric output file is paired with the seed and
//! parameters that produced it, plus a checksum per output.

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Serialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub experiment: String,
    pub version: String,
    pub master_seed: u64,
    pub thread_budget: usize,
    pub wall_clock_seconds: f64,
    pub config: serde_json::Value,
    pub outputs: Vec<OutputRecord>,
}

/// Collects output files; on failure the caller drops partial outputs.
pub struct OutputSet {
    dir: PathBuf,
    started: Instant,
    files: Vec<PathBuf>,
}

impl OutputSet {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(OutputSet {
            dir: dir.to_path_buf(),
            started: Instant::now(),
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(path.clone());
        Ok(path)
    }

    /// Remove everything written so far (used on failure).
    pub fn discard(&mut self) {
        for f in self.files.drain(..) {
            let _ = fs::remove_file(f);
        }
    }

    pub fn finish(
        self,
        experiment: &str,
        master_seed: u64,
        thread_budget: usize,
        config: serde_json::Value,
    ) -> Result<PathBuf> {
        let mut outputs = Vec::new();
        for f in &self.files {
            let bytes = fs::read(f)?;
            let mut hasher = Sha256::new();
            hasher.update(&bytes);
            let digest = hasher.finalize();
            let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
            outputs.push(OutputRecord {
                file: f
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                sha256: hex,
                bytes: bytes.len() as u64,
            });
        }
        let manifest = RunManifest {
            experiment: experiment.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed,
            thread_budget,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            config,
            outputs,
        };
        let path = self.dir.join("manifest.json");
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
        Ok(path)
    }
}
