//! Output directory bookkeeping and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Artifacts of one command, hashed for the manifest.
pub struct Outputs {
    dir: PathBuf,
    artifacts: BTreeMap<String, String>,
    started: Instant,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: Option<&'a Path>,
    inputs: &'a [PathBuf],
    out: &'a Path,
    seed: u64,
    precision: u32,
    wall_time_secs: f64,
    artifacts: &'a BTreeMap<String, String>,
}

pub struct RunInfo<'a> {
    pub command: &'a str,
    pub config: Option<&'a Path>,
    pub inputs: Vec<PathBuf>,
    pub seed: u64,
    pub precision: u32,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            artifacts: BTreeMap::new(),
            started: Instant::now(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `bytes` to `name` through a temporary file and a rename.
    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let bytes = bytes.as_ref();
        atomic_write(&self.path(name), bytes)?;
        self.artifacts.insert(name.to_string(), sha256(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }

    /// Hashes a file some other writer put at `name`.
    pub fn record(&mut self, name: &str) -> Result<()> {
        let path = self.path(name);
        let bytes = fs::read(&path).with_context(|| format!("cannot read back {}", path.display()))?;
        self.artifacts.insert(name.to_string(), sha256(&bytes));
        Ok(())
    }

    pub fn finish(self, info: RunInfo<'_>) -> Result<()> {
        let manifest = Manifest {
            command: info.command,
            config: info.config,
            inputs: &info.inputs,
            out: &self.dir,
            seed: info.seed,
            precision: info.precision,
            wall_time_secs: self.started.elapsed().as_secs_f64(),
            artifacts: &self.artifacts,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        atomic_write(&self.dir.join("manifest.json"), text.as_bytes())
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("cannot move {} into place", path.display()))?;
    Ok(())
}

pub fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
