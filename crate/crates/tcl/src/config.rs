//! Configuration files and command-line overrides.
//!
//! A config file is TOML whose keys are the fields of [`TrainConfig`], plus
//! an optional `preset` naming the base configuration the file modifies.
//! Keys the file omits keep the preset's value. Flags are applied last.

use std::fs;
use std::path::Path;

use serde::Deserialize;
use tcl_core::trainer::{Mode, TrainConfig};
use toml::{Table, Value};

use crate::error::{CliError, Result};

/// Key that selects the base preset instead of naming a field.
pub const PRESET_KEY: &str = "preset";

/// Values given on the command line. `set` holds raw `key=value` pairs.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub mode: Option<Mode>,
    pub tcl_scale: Option<f64>,
    pub seed: Option<u64>,
    pub budget: Option<u64>,
    pub parallel_collection: Option<bool>,
    pub set: Vec<String>,
}

impl Overrides {
    fn to_table(&self, problems: &mut Vec<String>) -> Table {
        let mut t = Table::new();
        for kv in &self.set {
            match kv.split_once('=') {
                Some((k, v)) => {
                    t.insert(k.trim().to_string(), parse_value(v.trim()));
                }
                None => problems.push(format!("--set `{kv}`: expected key=value")),
            }
        }
        if let Some(m) = self.mode {
            t.insert("mode".into(), Value::String(m.name().into()));
        }
        if let Some(s) = self.tcl_scale {
            t.insert("tcl_scale".into(), Value::Float(s));
        }
        if let Some(s) = self.seed {
            t.insert("seed".into(), int_value("seed", s, problems));
        }
        if let Some(b) = self.budget {
            t.insert("env_step_budget".into(), int_value("env_step_budget", b, problems));
        }
        if let Some(p) = self.parallel_collection {
            t.insert("parallel_collection".into(), Value::Boolean(p));
        }
        t
    }
}

fn int_value(key: &str, v: u64, problems: &mut Vec<String>) -> Value {
    match i64::try_from(v) {
        Ok(i) => Value::Integer(i),
        Err(_) => {
            problems.push(format!("{key}: {v} exceeds the largest storable integer"));
            Value::Integer(0)
        }
    }
}

/// A TOML literal, or the raw text as a string when it is not one.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    text.parse::<Table>()
        .map_err(|e| CliError::format(path)(format!("invalid TOML: {e}")))
}

fn config_table(config: &TrainConfig) -> Table {
    Table::try_from(config).expect("configurations serialize to TOML")
}

/// Builds the effective configuration from an optional file and flags.
///
/// Every problem is collected before failing: unknown keys, values of the
/// wrong type (reported per key) and violated invariants. When the mode is
/// not `tcl` and no layer sets `tcl_scale`, the scale becomes 0.
pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<TrainConfig> {
    let mut file = match path {
        Some(p) => read_table(p)?,
        None => Table::new(),
    };
    let origin = match path {
        Some(p) => p.display().to_string(),
        None => "command-line flags".to_string(),
    };
    let mut problems = Vec::new();

    let preset_name = match (&overrides.preset, file.remove(PRESET_KEY)) {
        (Some(name), _) => name.clone(),
        (None, Some(Value::String(name))) => name,
        (None, Some(other)) => {
            problems.push(format!("{PRESET_KEY}: expected a string, got {}", other.type_str()));
            "desk".into()
        }
        (None, None) => "desk".into(),
    };
    let base = match TrainConfig::preset(&preset_name) {
        Ok(c) => c,
        Err(e) => return Err(CliError::Config { origin, problems: vec![format!("{PRESET_KEY}: {e}")] }),
    };
    let base_table = config_table(&base);
    let flags = overrides.to_table(&mut problems);

    let mut layered: Vec<(String, Value)> = Vec::new();
    for (source, table) in [("", &file), ("--set ", &flags)] {
        for (k, v) in table {
            if base_table.contains_key(k) {
                layered.push((k.clone(), v.clone()));
            } else {
                problems.push(format!("{source}{k}: unknown key"));
            }
        }
    }
    let mut merged = base_table.clone();
    for (k, v) in &layered {
        merged.insert(k.clone(), v.clone());
        let mut single = base_table.clone();
        single.insert(k.clone(), v.clone());
        if let Err(e) = TrainConfig::deserialize(Value::Table(single)) {
            problems.push(format!("{k}: {}", e.message().trim()));
        }
    }
    if !problems.is_empty() {
        return Err(CliError::Config { origin, problems });
    }

    let mut config = TrainConfig::deserialize(Value::Table(merged))
        .map_err(|e| CliError::Config { origin: origin.clone(), problems: vec![e.message().to_string()] })?;
    let scale_given = layered.iter().any(|(k, _)| k == "tcl_scale");
    if config.mode != Mode::Tcl && !scale_given {
        config.tcl_scale = 0.0;
    }
    let problems = config.problems();
    if problems.is_empty() {
        Ok(config)
    } else {
        Err(CliError::Config { origin, problems })
    }
}

/// The configuration as a standalone TOML document.
pub fn to_toml(config: &TrainConfig) -> String {
    toml::to_string(config).expect("configurations serialize to TOML")
}

/// Keys whose values differ between two configurations, in key order.
pub fn differing_keys(a: &TrainConfig, b: &TrainConfig) -> Vec<String> {
    let (ta, tb) = (config_table(a), config_table(b));
    ta.iter()
        .filter(|(k, v)| tb.get(*k) != Some(*v))
        .map(|(k, v)| format!("{k}: {v} vs {}", tb[k]))
        .collect()
}
