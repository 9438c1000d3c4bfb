//! Per-run reproducibility record.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::config_hash;

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub ms: f64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub threads: usize,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
    pub timings: Vec<StageTiming>,
}

impl RunManifest {
    pub fn new(command: &str, config: Value, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash(&config),
            config,
            seed,
            threads: rayon::current_num_threads(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
        }
    }

    /// Records a file, or every file below a directory in sorted order.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        for file in files_under(path)? {
            let bytes = fs::read(&file).with_context(|| format!("reading {}", file.display()))?;
            self.inputs.push(InputRecord {
                path: file.display().to_string(),
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
        }
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Runs `f` as a named stage and records its wall time.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push(StageTiming {
            stage: name.to_string(),
            ms: start.elapsed().as_secs_f64() * 1e3,
        });
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }
}

fn files_under(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for e in entries {
        if e.file_name().is_some_and(|n| n == "manifest.json") {
            continue;
        }
        out.extend(files_under(&e)?);
    }
    Ok(out)
}

/// `results.csv` → `results.manifest.json`.
pub fn sibling_manifest(file: &Path) -> PathBuf {
    let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    file.with_file_name(format!("{stem}.manifest.json"))
}
