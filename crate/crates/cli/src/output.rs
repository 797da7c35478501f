//! Artifact writer. Every file goes through `Outputs`, so the manifest lists
//! all of them.

use std::io::Write;
use std::path::PathBuf;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Debug, Serialize)]
pub struct FileRecord {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub cli_version: &'static str,
    pub core_version: &'static str,
    pub command: &'static str,
    pub config_sha256: String,
    pub seed: u64,
    pub config: &'a ExperimentConfig,
    pub status: &'a str,
    pub files: &'a [FileRecord],
}

pub struct Outputs {
    dir: PathBuf,
    files: Vec<FileRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the experiment itself; the output location is left out.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String, CliError> {
    Ok(sha256_hex(&serde_json::to_vec(&located_nowhere(cfg))?))
}

fn located_nowhere(cfg: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig { out: None, ..cfg.clone() }
}

impl Outputs {
    pub fn create(dir: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir, files: Vec::new() })
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.files.retain(|f| f.path != name);
        self.files.push(FileRecord { path: name.to_string(), bytes: bytes.len(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    pub fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write_bytes(name, &buf)
    }

    pub fn finish(mut self, cfg: &ExperimentConfig, status: &str) -> Result<(), CliError> {
        let files = std::mem::take(&mut self.files);
        let recorded = located_nowhere(cfg);
        let manifest = Manifest {
            tool: "loopfloer",
            cli_version: env!("CARGO_PKG_VERSION"),
            core_version: loopfloer::VERSION,
            command: cfg.command.name(),
            config_sha256: config_hash(cfg)?,
            seed: cfg.seed,
            config: &recorded,
            status,
            files: &files,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        let mut f = std::fs::File::create(self.dir.join("manifest.json"))?;
        f.write_all(&bytes)?;
        Ok(())
    }
}
