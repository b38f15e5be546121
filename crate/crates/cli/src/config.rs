use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use toml::{Table, Value};

/// Values from an optional TOML file. Top-level keys apply to every
/// subcommand; a `[name]` table overrides them for subcommand `name`.
/// Keys may use `-` or `_`.
#[derive(Debug, Default, Clone)]
pub struct Settings {
    merged: Table,
}

impl Settings {
    pub fn load(path: Option<&Path>, section: &str) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let table: Table = text
            .parse()
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(Settings::from_table(table, section))
    }

    pub fn from_table(table: Table, section: &str) -> Self {
        let mut merged = Table::new();
        let mut own = None;
        for (k, v) in table {
            let k = k.replace('-', "_");
            match v {
                Value::Table(t) if k == section => own = Some(t),
                Value::Table(_) => {}
                v => {
                    merged.insert(k, v);
                }
            }
        }
        for (k, v) in own.unwrap_or_default() {
            merged.insert(k.replace('-', "_"), v);
        }
        Settings { merged }
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        match self.merged.get(key) {
            None => Ok(None),
            Some(v) => v
                .clone()
                .try_into()
                .map(Some)
                .with_context(|| format!("config key `{key}` has the wrong type")),
        }
    }

    /// Flag if given, else the config value, else `default`.
    pub fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }

    /// Like [`Settings::pick`] for values without a default.
    pub fn require<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<T> {
        match flag {
            Some(v) => Ok(v),
            None => self
                .get(key)?
                .with_context(|| format!("missing --{}; pass the flag or set `{key}` in the config", key.replace('_', "-"))),
        }
    }

    /// Every key except those in `skip`, as a table for typed deserialization.
    pub fn without(&self, skip: &[&str]) -> Table {
        self.merged
            .iter()
            .filter(|(k, _)| !skip.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}
