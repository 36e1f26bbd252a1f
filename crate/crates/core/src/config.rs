//! Layered run configuration: defaults, a TOML file, `ADVSIM_*` environment
//! variables and command-line overrides, applied in that order.

use crate::sim::SimConfig;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

pub const ENV_PREFIX: &str = "ADVSIM_";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n: usize,
    /// Template name, or `all` to cycle through every template.
    pub template: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 100,
            template: "all".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    /// Fit the prior to the scenarios' logged trajectories, keeping
    /// `sim.prior.lambda`.
    pub fit: bool,
    /// JSON prior to load instead; takes precedence over `fit`.
    pub file: Option<PathBuf>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            fit: true,
            file: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    /// Learned planner weight file, required by `sim.ov_planner = "learned"`.
    pub weights: Option<PathBuf>,
    pub synth: SynthConfig,
    pub prior: PriorConfig,
    pub sim: SimConfig,
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Sets `path` (dot-separated) in `table`, creating intermediate tables.
fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed key '{path}'")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{p}' in '{path}' is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// `ADVSIM_SIM__INTENTION_MODE=heuristic` becomes `sim.intention_mode`.
pub fn env_key(var: &str) -> Option<String> {
    let rest = var.strip_prefix(ENV_PREFIX)?;
    (!rest.is_empty()).then(|| {
        rest.split("__")
            .map(str::to_ascii_lowercase)
            .collect::<Vec<_>>()
            .join(".")
    })
}

/// Merges the layers. `file` is the TOML text of the config file, `env` the
/// process environment and `sets` the `key=value` overrides from flags.
pub fn resolve(file: Option<&str>, env: &[(String, String)], sets: &[String]) -> Result<CliConfig> {
    let mut table: toml::Table = match file {
        Some(text) => {
            toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))?
        }
        None => toml::Table::new(),
    };
    let mut env_sorted: Vec<&(String, String)> = env.iter().collect();
    env_sorted.sort();
    for (k, v) in env_sorted {
        if let Some(path) = env_key(k) {
            set_path(&mut table, &path, parse_value(v))?;
        }
    }
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{s}' is not key=value")))?;
        set_path(&mut table, k.trim(), parse_value(v.trim()))?;
    }
    let cfg: CliConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.sim.limits.validate().map_err(Error::Config)?;
    cfg.sim.intention.validate()?;
    Ok(cfg)
}

impl CliConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}
