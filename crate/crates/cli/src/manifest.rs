use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const RUN_MANIFEST_FILE: &str = "run_manifest.txt";

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Key=value record of one command invocation: resolved config, input and
/// artifact hashes, and headline results.
#[derive(Debug, Default)]
pub struct RunManifest {
    pub command: String,
    pub config: Vec<(String, String)>,
    inputs: Vec<(String, PathBuf, String)>,
    artifacts: Vec<(String, PathBuf, String)>,
    pub results: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str, config: Vec<(String, String)>) -> Self {
        Self {
            command: command.to_string(),
            config,
            ..Self::default()
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> Result<(), CliError> {
        let hash = sha256_file(path)?;
        self.inputs.push((name.to_string(), path.to_path_buf(), hash));
        Ok(())
    }

    pub fn artifact(&mut self, name: &str, path: &Path) -> Result<(), CliError> {
        let hash = sha256_file(path)?;
        self.artifacts.push((name.to_string(), path.to_path_buf(), hash));
        Ok(())
    }

    pub fn result(&mut self, key: &str, value: impl ToString) {
        self.results.push((key.to_string(), value.to_string()));
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "tool={}", env!("CARGO_PKG_NAME"));
        let _ = writeln!(out, "version={}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "command={}", self.command);
        for (k, v) in &self.config {
            let _ = writeln!(out, "config.{k}={v}");
        }
        for (kind, list) in [("input", &self.inputs), ("artifact", &self.artifacts)] {
            for (name, path, hash) in list {
                let _ = writeln!(out, "{kind}.{name}.path={}", path.display());
                let _ = writeln!(out, "{kind}.{name}.sha256={hash}");
            }
        }
        for (k, v) in &self.results {
            let _ = writeln!(out, "result.{k}={v}");
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(RUN_MANIFEST_FILE);
        fs::write(&path, self.to_text()).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
