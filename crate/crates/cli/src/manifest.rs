use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub summary: serde_json::Value,
}

pub fn sha256_file(path: &Path) -> CliResult<(String, u64)> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".into(),
    });
    let mut file = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    file.write_all(contents)
        .and_then(|_| file.sync_all())
        .map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// Collects the files a run reads and writes, relative to its output
/// directory where possible.
pub struct Run {
    command: String,
    started_at: DateTime<Utc>,
    out_dir: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    pub fn start(command: &str, out_dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
        Ok(Run {
            command: command.to_string(),
            started_at: Utc::now(),
            out_dir: out_dir.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Writes an output file atomically and records it.
    pub fn write(&mut self, name: &str, contents: &[u8]) -> CliResult<PathBuf> {
        let path = self.path(name);
        write_atomic(&path, contents)?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    pub fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> CliResult<PathBuf> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| CliError::io(self.path(name), e))?;
        self.write(name, &buf)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut text = serde_json::to_vec_pretty(value).expect("serializable");
        text.push(b'\n');
        self.write(name, &text)
    }

    fn digest(&self, path: &Path) -> CliResult<FileDigest> {
        let (sha256, bytes) = sha256_file(path)?;
        let shown = path.strip_prefix(&self.out_dir).unwrap_or(path);
        Ok(FileDigest {
            path: shown.to_string_lossy().into_owned(),
            sha256,
            bytes,
        })
    }

    /// Writes `manifest.json` into the output directory.
    pub fn finish(self, config: &RunConfig, summary: serde_json::Value) -> CliResult<RunManifest> {
        let manifest = RunManifest {
            tool: "nreadout".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.clone(),
            started_at: self.started_at,
            finished_at: Utc::now(),
            config: config.clone(),
            inputs: self
                .inputs
                .iter()
                .map(|p| self.digest(p))
                .collect::<CliResult<_>>()?,
            outputs: self
                .outputs
                .iter()
                .map(|p| self.digest(p))
                .collect::<CliResult<_>>()?,
            summary,
        };
        let mut text = serde_json::to_vec_pretty(&manifest).expect("serializable");
        text.push(b'\n');
        write_atomic(&self.out_dir.join("manifest.json"), &text)?;
        Ok(manifest)
    }
}
