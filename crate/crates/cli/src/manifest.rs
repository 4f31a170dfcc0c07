//! Line-oriented `key=value` record of a command run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        write!(out, "{:02x}", b).unwrap();
    }
    out
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Clone, Debug, Default)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config: Vec<(String, String)>,
    pub inputs: Vec<(PathBuf, String)>,
    pub artifacts: Vec<(PathBuf, String)>,
    pub seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        RunManifest {
            command: command.to_owned(),
            seed,
            ..Default::default()
        }
    }

    pub fn config(&mut self, key: &str, value: impl ToString) {
        self.config.push((key.to_owned(), value.to_string()));
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = file_digest(path)?;
        self.inputs.push((path.to_owned(), digest));
        Ok(())
    }

    /// Records an artifact already written to `path`.
    pub fn artifact(&mut self, path: &Path) -> Result<()> {
        let digest = file_digest(path)?;
        self.artifacts.push((path.to_owned(), digest));
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "manifest=v1").unwrap();
        writeln!(out, "command={}", self.command).unwrap();
        writeln!(out, "seed={}", self.seed).unwrap();
        for (k, v) in &self.config {
            writeln!(out, "config.{}={}", k, v).unwrap();
        }
        for (i, (p, d)) in self.inputs.iter().enumerate() {
            writeln!(out, "input.{}.path={}", i, p.display()).unwrap();
            writeln!(out, "input.{}.sha256={}", i, d).unwrap();
        }
        for (i, (p, d)) in self.artifacts.iter().enumerate() {
            writeln!(out, "artifact.{}.path={}", i, p.display()).unwrap();
            writeln!(out, "artifact.{}.sha256={}", i, d).unwrap();
        }
        writeln!(out, "timing.seconds={:.3}", self.seconds).unwrap();
        out
    }

    /// Parses a rendered manifest back into key/value pairs.
    pub fn parse(text: &str) -> Vec<(String, String)> {
        text.lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_owned(), v.to_owned()))
            .collect()
    }
}
