use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use finfuse_core::digest::sha256_file;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Record of one command invocation. Paths are relative to the run directory
/// for outputs and as written in the config for inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: String,
    pub exit_status: i32,
    pub counts: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// TOML snapshot of the effective configuration.
    pub config: String,
}

/// Collects counts and file hashes while a command runs.
pub struct ManifestBuilder {
    command: String,
    run_dir: PathBuf,
    started_at: String,
    counts: BTreeMap<String, u64>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl ManifestBuilder {
    pub fn new(command: &str, run_dir: &Path) -> Self {
        Self {
            command: command.into(),
            run_dir: run_dir.to_path_buf(),
            started_at: now(),
            counts: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn count(&mut self, key: impl Into<String>, n: u64) {
        *self.counts.entry(key.into()).or_insert(0) += n;
    }

    /// `label` is how the file is named in the manifest.
    pub fn input(&mut self, label: impl Into<String>, path: &Path) -> Result<()> {
        let h = sha256_file(path).with_context(|| format!("hashing {}", path.display()))?;
        self.inputs.insert(label.into(), h);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let h = sha256_file(path).with_context(|| format!("hashing {}", path.display()))?;
        self.outputs.insert(self.relative(path), h);
        Ok(())
    }

    pub fn relative(&self, path: &Path) -> String {
        relative_to(&self.run_dir, path)
    }

    pub fn finish(self, cfg: &RunConfig, exit_status: i32) -> RunManifest {
        RunManifest {
            command: self.command,
            tool_version: TOOL_VERSION.into(),
            seed: cfg.seed,
            started_at: self.started_at,
            finished_at: now(),
            exit_status,
            counts: self.counts,
            inputs: self.inputs,
            outputs: self.outputs,
            config: cfg.to_toml(),
        }
    }
}

pub fn relative_to(base: &Path, path: &Path) -> String {
    path.strip_prefix(base)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn manifest_path(run_dir: &Path, command: &str) -> PathBuf {
    run_dir.join("manifests").join(format!("{command}.json"))
}

impl RunManifest {
    /// Writes to a temporary sibling and renames it into place.
    pub fn write(&self, run_dir: &Path) -> Result<PathBuf> {
        let path = manifest_path(run_dir, &self.command);
        let dir = path.parent().expect("manifest path has a parent");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(".{}.json.tmp", self.command));
        let mut body = serde_json::to_vec_pretty(self)?;
        body.push(b'\n');
        fs::write(&tmp, body)?;
        fs::rename(&tmp, &path)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Re-hashes every output and returns the ones whose content changed.
    pub fn stale_outputs(&self, run_dir: &Path) -> Vec<String> {
        self.outputs
            .iter()
            .filter(|(rel, h)| sha256_file(&run_dir.join(rel)).ok().as_ref() != Some(*h))
            .map(|(rel, _)| rel.clone())
            .collect()
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut body = serde_json::to_vec_pretty(value)?;
    body.push(b'\n');
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}
