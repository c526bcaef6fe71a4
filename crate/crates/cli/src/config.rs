//! Config files, `key=value` overrides and small argument parsers.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use symplectic_ml::data::parse_fraction;

/// A TOML table from `path` (or empty) with `overrides` applied. Dotted
/// keys address nested tables.
pub fn load_table(path: Option<&Path>, overrides: &[String]) -> Result<toml::Table> {
    let mut table = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            text.parse::<toml::Table>().with_context(|| format!("parsing config {}", p.display()))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        let (key, raw) = o.split_once('=').ok_or_else(|| anyhow!("override '{o}' is not key=value"))?;
        set_dotted(&mut table, key.trim(), parse_value(raw.trim()))?;
    }
    Ok(table)
}

/// Deserialize a table, rejecting unknown keys where the target does.
pub fn from_table<T: DeserializeOwned>(table: toml::Table) -> Result<T> {
    T::deserialize(toml::Value::Table(table)).map_err(|e| anyhow!("invalid configuration: {e}"))
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| anyhow!("empty override key"))?;
    let mut cur = table;
    for p in parts {
        let next = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = next.as_table_mut().ok_or_else(|| anyhow!("override key '{key}': '{p}' is not a table"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// `"1/7"` or `"0.25"`.
pub fn number(s: &str) -> std::result::Result<f64, String> {
    parse_fraction(s).map_err(|e| e.to_string())
}

/// `start:end:step`, inclusive of `end` up to rounding.
pub fn grid(s: &str) -> std::result::Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, h] = parts[..] else {
        return Err(format!("grid '{s}' must look like start:end:step"));
    };
    let (a, b, h) = (number(a)?, number(b)?, number(h)?);
    if !(h > 0.0) || b < a {
        return Err(format!("grid '{s}' needs step > 0 and end >= start"));
    }
    let n = ((b - a) / h + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|k| round12(a + k as f64 * h)).collect())
}

fn round12(v: f64) -> f64 {
    (v * 1e12).round() / 1e12
}

/// `qx,qy,px,py`.
pub fn state(s: &str) -> std::result::Result<[f64; 4], String> {
    let v: Vec<f64> = s.split(',').map(number).collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|_| format!("state '{s}' must have four comma-separated values"))
}

pub fn ensure_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        bail!("{name} must be positive, got {v}");
    }
    Ok(())
}
