//! Result files and the run manifest.

use std::fs;
use std::path::Path;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use stokeslab::Field;

use crate::config::canonical;
use crate::CliError;

/// One result file, named relative to the output directory.
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn json(name: impl Into<String>, value: &Value) -> Result<Self, CliError> {
        let mut bytes = serde_json::to_vec_pretty(&canonical(value))?;
        bytes.push(b'\n');
        Ok(Self {
            name: name.into(),
            bytes,
        })
    }

    pub fn field(name: impl Into<String>, field: &Field) -> Result<Self, CliError> {
        let mut bytes = Vec::new();
        field.write_binary(&mut bytes)?;
        Ok(Self {
            name: name.into(),
            bytes,
        })
    }

    /// RFC-4180 CSV from a header and rows of already formatted cells.
    pub fn csv(name: impl Into<String>, header: &[&str], rows: &[Vec<String>]) -> Result<Self, CliError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| CliError::Io(std::io::Error::other(e.to_string())))?;
        Ok(Self {
            name: name.into(),
            bytes,
        })
    }

    pub fn raw(name: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            bytes,
        }
    }
}

/// What a subcommand produced: a summary (written as `result.json` and
/// echoed on stdout) and further files.
pub struct Outcome {
    pub summary: Value,
    pub files: Vec<Artifact>,
}

impl Outcome {
    pub fn summary(summary: Value) -> Self {
        Self {
            summary,
            files: Vec::new(),
        }
    }

    pub fn with(mut self, file: Artifact) -> Self {
        self.files.push(file);
        self
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Number formatting shared by every CSV: shortest round-trip form.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}

pub struct RunRecord<'a> {
    pub subcommand: &'a str,
    pub config: &'a Value,
    pub seed: u64,
    pub threads: usize,
    pub wall_time: f64,
}

/// Write the artifacts and `manifest.json`; returns the manifest.
pub fn write_all(dir: &Path, outcome: &Outcome, record: &RunRecord<'_>) -> Result<Value, CliError> {
    fs::create_dir_all(dir)?;
    let mut files = vec![Artifact::json("result.json", &outcome.summary)?];
    files.extend(
        outcome
            .files
            .iter()
            .map(|a| Artifact::raw(a.name.clone(), a.bytes.clone())),
    );
    let mut listed = Vec::new();
    for a in &files {
        fs::write(dir.join(&a.name), &a.bytes)?;
        listed.push(json!({
            "file": a.name,
            "bytes": a.bytes.len(),
            "sha256": sha256_hex(&a.bytes),
        }));
    }
    let config = canonical(record.config);
    // The hash covers the parameters that determine the results.
    let mut hashed = config.clone();
    if let Some(map) = hashed.as_object_mut() {
        map.remove("out");
        map.remove("threads");
    }
    let config_text = serde_json::to_string(&hashed)?;
    let manifest = json!({
        "tool": "stokeslab",
        "version": stokeslab::VERSION,
        "cli_version": env!("CARGO_PKG_VERSION"),
        "subcommand": record.subcommand,
        "config": config,
        "config_sha256": sha256_hex(config_text.as_bytes()),
        "seed": record.seed,
        "prng": stokeslab::corpus::PRNG_ALGORITHM,
        "threads": record.threads,
        "wall_time_seconds": record.wall_time,
        "artifacts": listed,
    });
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    fs::write(dir.join("manifest.json"), bytes)?;
    Ok(manifest)
}
