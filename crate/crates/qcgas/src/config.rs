//! Flat key-value run configuration.
//!
//! The format is one `key = value` pair per line with dotted section
//! prefixes (`ensemble.z = 1.0`), `#` comments, and blank lines. It is
//! diff-friendly and trivially parseable from any language. A JSON sidecar
//! produced by a previous run is also accepted: its `config` object is the
//! same flat map, so runs round-trip.
//!
//! Readers mark keys as consumed; a key nobody consumed is an error, never
//! silently ignored.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::invalid(format!(
                    "line {}: expected `key = value`, got {raw:?}",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::invalid(format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(Error::invalid(format!(
                    "line {}: duplicate key {key:?}",
                    lineno + 1
                )));
            }
        }
        Ok(RunConfig { entries, used: RefCell::new(BTreeSet::new()) })
    }

    /// Reads a flat config file, or the `config` object of a JSON sidecar
    /// (detected by a leading `{`).
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
        if text.trim_start().starts_with('{') {
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| Error::invalid(format!("bad JSON sidecar: {e}")))?;
            let Some(config) = value.get("config").and_then(|c| c.as_object()) else {
                return Err(Error::invalid("JSON sidecar has no `config` object"));
            };
            let mut entries = BTreeMap::new();
            for (k, v) in config {
                let s = match v {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                entries.insert(k.clone(), s);
            }
            return Ok(RunConfig { entries, used: RefCell::new(BTreeSet::new()) });
        }
        RunConfig::parse(&text)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        let v = self.entries.get(key).map(|s| s.as_str());
        if v.is_some() {
            self.used.borrow_mut().insert(key.to_string());
        }
        v
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::invalid(format!("missing required config key {key:?}")))
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::invalid(format!("key {key:?}: {s:?} is not a number")))
            })
            .transpose()
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.get_f64(key)?.unwrap_or(default))
    }

    pub fn require_f64(&self, key: &str) -> Result<f64> {
        self.get_f64(key)?
            .ok_or_else(|| Error::invalid(format!("missing required config key {key:?}")))
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.get(key)
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| Error::invalid(format!("key {key:?}: {s:?} is not an integer")))
            })
            .transpose()
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.get_usize(key)?.unwrap_or(default))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        self.get(key)
            .map(|s| {
                s.parse::<u64>()
                    .map_err(|_| Error::invalid(format!("key {key:?}: {s:?} is not an integer")))
            })
            .transpose()
            .map(|v| v.unwrap_or(default))
    }

    /// Comma-separated list of numbers.
    pub fn get_f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(s) = self.get(key) else { return Ok(None) };
        let mut out = Vec::new();
        for item in s.split(',') {
            let item = item.trim();
            if item.is_empty() {
                continue;
            }
            out.push(item.parse::<f64>().map_err(|_| {
                Error::invalid(format!("key {key:?}: {item:?} is not a number"))
            })?);
        }
        if out.is_empty() {
            return Err(Error::invalid(format!("key {key:?} lists no values")));
        }
        Ok(Some(out))
    }

    /// Point list: points separated by `;`, coordinates by spaces or commas
    /// (`0.1 0.2; 0.3 0.4` in d = 2, `0.25; 0.75` or `0.25, 0.75` in d = 1).
    pub fn get_points(&self, key: &str, dim: usize) -> Result<Option<Vec<f64>>> {
        let Some(s) = self.get(key) else { return Ok(None) };
        let mut coords = Vec::new();
        let chunks: Vec<&str> = if s.contains(';') {
            s.split(';').collect()
        } else if dim == 1 {
            s.split(',').collect()
        } else {
            vec![s]
        };
        for chunk in chunks {
            let chunk = chunk.trim();
            if chunk.is_empty() {
                continue;
            }
            let parts: Vec<&str> =
                chunk.split(|c: char| c == ',' || c.is_whitespace()).filter(|p| !p.is_empty()).collect();
            if parts.len() != dim {
                return Err(Error::invalid(format!(
                    "key {key:?}: point {chunk:?} has {} coordinates, expected {dim}",
                    parts.len()
                )));
            }
            for p in parts {
                coords.push(p.parse::<f64>().map_err(|_| {
                    Error::invalid(format!("key {key:?}: {p:?} is not a number"))
                })?);
            }
        }
        Ok(Some(coords))
    }

    /// Errors on any key no reader consumed; typos never pass silently.
    pub fn ensure_fully_consumed(&self) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<&String> =
            self.entries.keys().filter(|k| !used.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "unknown config key(s): {}",
                unknown.iter().map(|s| format!("{s:?}")).collect::<Vec<_>>().join(", ")
            )))
        }
    }
}
