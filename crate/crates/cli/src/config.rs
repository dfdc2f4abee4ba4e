//! Layered run configuration: built-in defaults, then the JSON config file,
//! then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

/// Options shared by every subcommand.
#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunArgs {
    /// JSON config file; its keys are the flag names in snake_case and flags
    /// given on the command line take precedence.
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory for result files and manifest.json.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seed of the test-field corpus.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Periodic cube `[-L, L)^n` with `N` points per axis.
#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct GridArgs {
    /// Spatial dimension n.
    #[arg(long)]
    pub n: Option<usize>,
    /// Grid points per axis N.
    #[arg(long)]
    pub points: Option<usize>,
    /// Half side L of the cube.
    #[arg(long)]
    pub half_extent: Option<f64>,
}

impl GridArgs {
    pub fn build(&self) -> Result<stokeslab::Grid, CliError> {
        Ok(stokeslab::Grid::new(
            need(self.n, "n")?,
            need(self.points, "points")?,
            need(self.half_extent, "half_extent")?,
        )?)
    }
}

/// Subcommand arguments that carry the shared run options.
pub trait Layered: Serialize + DeserializeOwned {
    fn run(&self) -> &RunArgs;
    fn run_mut(&mut self) -> &mut RunArgs;
    /// Defaults applied below the config file.
    fn defaults() -> Value;
}

pub fn need<T>(value: Option<T>, name: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Config(format!("missing required parameter `{name}`")))
}

fn read_file(path: &Path, subcommand: &str) -> Result<Map<String, Value>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("config {} is not valid JSON: {e}", path.display())))?;
    let Value::Object(mut map) = value else {
        return Err(CliError::Config("config file must hold a JSON object".into()));
    };
    if let Some(name) = map.remove("subcommand") {
        if name.as_str() != Some(subcommand) {
            return Err(CliError::Config(format!(
                "config is for subcommand {name}, not \"{subcommand}\""
            )));
        }
    }
    Ok(map)
}

/// Merge defaults, the config file named by `--config` and the flags.
pub fn resolve<T: Layered>(flags: T, subcommand: &str) -> Result<T, CliError> {
    let config = flags.run().config.clone();
    let Value::Object(flag_map) = serde_json::to_value(&flags)? else {
        unreachable!("argument structs serialize to objects");
    };
    let Value::Object(mut merged) = T::defaults() else {
        unreachable!("defaults are objects");
    };
    if let Some(path) = &config {
        for (k, v) in read_file(path, subcommand)? {
            if !flag_map.contains_key(&k) {
                return Err(CliError::Config(format!(
                    "unknown key `{k}` for subcommand {subcommand}"
                )));
            }
            merged.insert(k, v);
        }
    }
    for (k, v) in flag_map {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    let mut out: T = serde_json::from_value(Value::Object(merged))
        .map_err(|e| CliError::Config(format!("invalid config value: {e}")))?;
    // `config` is not serialized; keep the path for the record.
    out.run_mut().config = config;
    Ok(out)
}

/// JSON with object keys sorted at every level.
pub fn canonical(value: &Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let mut out = Map::new();
            for k in keys {
                out.insert(k.clone(), canonical(&map[k]));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(canonical).collect()),
        other => other.clone(),
    }
}
