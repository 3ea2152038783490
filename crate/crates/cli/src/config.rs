//! Run configuration: a TOML file merged with `--set a.b=value` overrides.

use std::path::{Path, PathBuf};

use q2p_core::synthetic::SyntheticConfig;
use q2p_core::{ModelConfig, SampleConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

/// Environment variable naming the config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "Q2P_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Directory holding `train.txt`, `valid.txt` and `test.txt`.
    pub triples: PathBuf,
    /// Directory of `{split}.jsonl` query files.
    pub queries: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            triples: "data".into(),
            queries: "queries".into(),
            checkpoints: "checkpoints".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// The single source of randomness; copied into every sub-config.
    pub seed: u64,
    pub paths: Paths,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub synthetic: SyntheticConfig,
}

impl RunConfig {
    /// Reads `file` (or the file named by [`CONFIG_ENV`], or nothing) and
    /// applies `overrides` in order.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let env_path = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        let path = file.map(Path::to_path_buf).or(env_path);
        let mut table = match &path {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| CliError::input("io", format!("{}: {e}", p.display())))?;
                text.parse::<Table>()
                    .map_err(|e| CliError::input("config", format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::input("config", e.message().to_owned()))?;
        cfg.train.seed = cfg.seed;
        cfg.sample.seed = cfg.seed;
        cfg.synthetic.seed = cfg.seed;
        cfg.model.validate()?;
        cfg.train.validate()?;
        cfg.sample.validate()?;
        Ok(cfg)
    }

    /// The effective configuration as echoed into artifacts.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn triple_files(&self) -> [PathBuf; 3] {
        ["train", "valid", "test"].map(|s| self.paths.triples.join(format!("{s}.txt")))
    }
}

/// `a.b.c=value`; the value is read as a TOML literal, else as a string.
fn apply_override(table: &mut Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::input("config", format!("override `{spec}` is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::input("config", format!("bad override key `{key}`")));
    }
    let value = parse_literal(raw.trim());
    let (last, parents) = parts.split_last().expect("at least one part");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::input("config", format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_owned()))
}
