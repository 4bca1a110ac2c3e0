//! Config file parsing, command line overrides, and default echoing.

use rkd_core::sim::ExperimentConfig;
use toml::Value;

use crate::error::{CliError, CliResult};

/// A parsed, overridden, validated config plus one log line per field
/// that fell back to its default.
#[derive(Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub defaults_applied: Vec<String>,
}

/// Parses TOML text, applies `key.path=value` overrides in order, then
/// validates. File-level syntax and type errors keep their line numbers;
/// override errors name the offending override.
pub fn parse_config(text: &str, overrides: &[String]) -> CliResult<LoadedConfig> {
    // Full parse first so file errors carry line and column spans.
    let file_config: ExperimentConfig =
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;

    let mut user_value: Value =
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let mut config = file_config;
    for raw in overrides {
        let patch = parse_override(raw)?;
        merge_value(&mut user_value, patch.clone());
        // Patch the fully resolved config, not the raw file: an override
        // like attack.gamma=10 must land inside the defaulted attack
        // section even when the file has no [attack] table.
        let mut full = Value::try_from(&config)
            .map_err(|e| CliError::Runtime(format!("config did not serialize: {e}")))?;
        merge_value(&mut full, patch);
        config = full
            .try_into()
            .map_err(|e| CliError::Config(format!("override `{raw}`: {e}")))?;
    }

    config.validate().map_err(CliError::from)?;

    let resolved = Value::try_from(&config)
        .map_err(|e| CliError::Runtime(format!("config did not serialize: {e}")))?;
    let mut defaults_applied = Vec::new();
    collect_defaults(&user_value, &resolved, "", &mut defaults_applied);

    Ok(LoadedConfig {
        config,
        defaults_applied,
    })
}

/// An override is a one-line TOML document with a dotted key. Bare words
/// on the right-hand side get a second chance as quoted strings, so
/// `aggregator.kind=fedavg` works without shell-escaped quotes.
fn parse_override(raw: &str) -> CliResult<Value> {
    if let Ok(v) = toml::from_str::<Value>(raw) {
        if v.as_table().is_some_and(|t| !t.is_empty()) {
            return Ok(v);
        }
    }
    let (key, val) = raw.split_once('=').ok_or_else(|| {
        CliError::Config(format!("override `{raw}` is not of the form key=value"))
    })?;
    let quoted = format!("{key}=\"{}\"", val.trim().replace('"', "\\\""));
    match toml::from_str::<Value>(&quoted) {
        Ok(v) => Ok(v),
        Err(e) => Err(CliError::Config(format!("override `{raw}`: {e}"))),
    }
}

/// Tables merge key by key; anything else replaces the base value.
fn merge_value(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Table(b), Value::Table(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge_value(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Walks the resolved config and records every leaf the user never set.
fn collect_defaults(user: &Value, resolved: &Value, prefix: &str, out: &mut Vec<String>) {
    let Value::Table(resolved_table) = resolved else {
        return;
    };
    let user_table = user.as_table();
    for (key, resolved_child) in resolved_table {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match user_table.and_then(|t| t.get(key)) {
            None => push_leaves(&path, resolved_child, out),
            Some(user_child) => {
                if resolved_child.is_table() {
                    collect_defaults(user_child, resolved_child, &path, out);
                }
            }
        }
    }
}

fn push_leaves(path: &str, value: &Value, out: &mut Vec<String>) {
    match value {
        Value::Table(t) => {
            for (k, v) in t {
                push_leaves(&format!("{path}.{k}"), v, out);
            }
        }
        leaf => out.push(format!("{path} = {leaf}")),
    }
}

/// The snapshot written next to a run's reports; parsing it back yields
/// the identical config.
pub fn render_resolved(config: &ExperimentConfig) -> CliResult<String> {
    toml::to_string_pretty(config)
        .map_err(|e| CliError::Runtime(format!("config did not serialize: {e}")))
}
