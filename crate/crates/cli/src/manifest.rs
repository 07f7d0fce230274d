//! Run manifests: what was run, on which inputs, producing which files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use seqlen_audit::dataset::sha256_hex;
use seqlen_audit::report::toolkit_version;
use serde::Serialize;

use crate::error::CliResult;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub path: PathBuf,
    /// Content hash of the parsed dataset or checkpoint.
    pub fingerprint: String,
}

#[derive(Debug, Serialize)]
pub struct OutputRecord {
    /// Relative to the manifest's directory.
    pub file: String,
    /// SHA-256 of the file bytes.
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub arguments: Vec<String>,
    pub toolkit_version: String,
    pub deterministic: bool,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<OutputRecord>,
}

impl RunManifest {
    pub fn new(subcommand: &str, deterministic: bool) -> Self {
        Self {
            subcommand: subcommand.into(),
            arguments: std::env::args().skip(1).collect(),
            toolkit_version: toolkit_version(),
            deterministic,
            config: serde_json::Value::Null,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn config(&mut self, value: impl Serialize) -> CliResult<()> {
        self.config = serde_json::to_value(value)?;
        Ok(())
    }

    pub fn seed(&mut self, name: &str, seed: u64) {
        self.seeds.insert(name.into(), seed);
    }

    pub fn input(&mut self, path: &Path, fingerprint: String) {
        self.inputs.push(InputRecord {
            path: path.to_path_buf(),
            fingerprint,
        });
    }

    /// Hash and record an artifact already written into `dir`.
    pub fn output(&mut self, dir: &Path, file: &str) -> CliResult<()> {
        let bytes = fs::read(dir.join(file))?;
        self.outputs.push(OutputRecord {
            file: file.into(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }
}
