//! Run manifests: what was run, with which resolved config and seeds, and
//! digests of every file read or written.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let hex: String = Sha256::digest(&data).iter().map(|b| format!("{b:02x}")).collect();
        Ok(Self {
            path: path.to_path_buf(),
            sha256: hex,
            bytes: data.len() as u64,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub status: String,
    pub exit_code: i32,
    pub error: Option<String>,
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub versions: BTreeMap<String, String>,
    pub threads: usize,
    pub deterministic: bool,
    pub wall_ms: f64,
}

/// Collects provenance while a subcommand runs.
pub struct Run {
    pub manifest: RunManifest,
    pub destination: Option<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    pub fn new(subcommand: &str, threads: usize, deterministic: bool, destination: Option<PathBuf>) -> Self {
        let versions = BTreeMap::from([
            ("pcfgan".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("pcf-core".to_string(), pcf_core::VERSION.to_string()),
        ]);
        Self {
            manifest: RunManifest {
                subcommand: subcommand.into(),
                status: "running".into(),
                exit_code: 0,
                error: None,
                config: Value::Null,
                seeds: BTreeMap::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                versions,
                threads,
                deterministic,
                wall_ms: 0.0,
            },
            destination,
            outputs: Vec::new(),
        }
    }

    pub fn config<T: Serialize>(&mut self, config: &T) -> Result<()> {
        self.manifest.config = serde_json::to_value(config)?;
        Ok(())
    }

    pub fn seed(&mut self, name: &str, seed: u64) {
        self.manifest.seeds.insert(name.into(), seed);
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    /// Register a file that will be digested when the run finishes.
    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Stamp the outcome, digest the outputs that exist and write the
    /// manifest (to stderr when the subcommand has no output target).
    pub fn finish(mut self, exit_code: i32, error: Option<String>, wall_ms: f64) -> Result<()> {
        self.manifest.exit_code = exit_code;
        self.manifest.status = if exit_code == 0 { "ok" } else { "error" }.into();
        self.manifest.error = error;
        self.manifest.wall_ms = wall_ms;
        for p in &self.outputs {
            if p.is_file() {
                self.manifest.outputs.push(FileDigest::of(p)?);
            }
        }
        let text = serde_json::to_string_pretty(&self.manifest)?;
        match &self.destination {
            Some(path) => {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir)?;
                }
                std::fs::write(path, text).with_context(|| format!("writing manifest {}", path.display()))?;
            }
            None => eprintln!("manifest: {}", serde_json::to_string(&self.manifest)?),
        }
        Ok(())
    }
}

/// `<file>.<suffix>` next to `file`.
pub fn sibling(file: &Path, suffix: &str) -> PathBuf {
    let mut name = file.as_os_str().to_os_string();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}
