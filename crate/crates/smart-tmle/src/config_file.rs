//! TOML configuration with environment overrides.
//!
//! Any key can be overridden by an environment variable named
//! `SMART_TMLE_<KEY>`, with `__` separating nested tables, e.g.
//! `SMART_TMLE_SEED=7`, `SMART_TMLE_H_WEIGHT_MODE=treatment_prevalence` or
//! `SMART_TMLE_ROLES__Y2=outcome`. Values are read as TOML literals when they
//! parse as one and as plain strings otherwise.

use std::path::Path;

use smart_tmle_core::config::AnalysisConfig;
use toml::{Table, Value};

use crate::error::IoError;

pub const ENV_PREFIX: &str = "SMART_TMLE_";

pub fn parse_config(text: &str) -> Result<AnalysisConfig, IoError> {
    resolve_config(text, std::iter::empty())
}

pub fn load_config(path: &Path) -> Result<AnalysisConfig, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    parse_config(&text)
}

fn literal(raw: &str) -> Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

/// Parse TOML `text` (possibly empty), apply `SMART_TMLE_*` overrides from
/// `vars` (usually `std::env::vars()`) and validate.
pub fn resolve_config<I>(text: &str, vars: I) -> Result<AnalysisConfig, IoError>
where
    I: IntoIterator<Item = (String, String)>,
{
    resolve_config_over(&AnalysisConfig::default(), text, vars)
}

/// Like [`resolve_config`], with keys missing from `text` taken from `base`
/// instead of the library defaults.
pub fn resolve_config_over<I>(base: &AnalysisConfig, text: &str, vars: I) -> Result<AnalysisConfig, IoError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut root = Table::try_from(base).map_err(|e| IoError::ConfigSyntax(e.to_string()))?;
    let file: Table = text.parse().map_err(|e: toml::de::Error| IoError::ConfigSyntax(e.to_string()))?;
    merge(&mut root, file);
    for (key, raw) in vars {
        let Some(rest) = key.strip_prefix(ENV_PREFIX) else { continue };
        let path: Vec<String> = rest.split("__").map(str::to_lowercase).collect();
        let (last, parents) = path.split_last().expect("split yields at least one part");
        let mut table = &mut root;
        for p in parents {
            table = table
                .entry(p.clone())
                .or_insert_with(|| Value::Table(Table::new()))
                .as_table_mut()
                .ok_or_else(|| IoError::ConfigSyntax(format!("{key}: `{p}` is not a table")))?;
        }
        table.insert(last.clone(), literal(&raw));
    }
    let cfg: AnalysisConfig = root.try_into().map_err(|e: toml::de::Error| IoError::ConfigSyntax(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Tables merge key by key; every other value replaces the old one.
fn merge(into: &mut Table, from: Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(Value::Table(old)), Value::Table(new)) => merge(old, new),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}
