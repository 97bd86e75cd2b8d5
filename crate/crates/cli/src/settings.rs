//! Layered settings: flag or `DIQA_*` variable (both handled by clap), then
//! the `--config` TOML file, then built-in defaults.
//!
//! Config keys are flag names with underscores. A key inside a table named
//! after the subcommand (`[mix]`, `[score]`, ...) wins over the same key at
//! the top level.

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub struct Settings {
    table: toml::Table,
    section: &'static str,
    /// Effective values in resolution order, recorded for the run manifest.
    pub effective: Map<String, Value>,
}

impl Settings {
    pub fn load(path: Option<&Path>, section: &'static str) -> Result<Self> {
        let table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<toml::Table>()
                    .map_err(|e| diqa_core::Error::InvalidConfig(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        Ok(Self {
            table,
            section,
            effective: Map::new(),
        })
    }

    fn lookup<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        let scoped = self
            .table
            .get(self.section)
            .and_then(|s| s.as_table())
            .and_then(|t| t.get(key));
        let value = scoped.or_else(|| self.table.get(key).filter(|v| !v.is_table()));
        value
            .map(|v| {
                v.clone().try_into().map_err(|e| {
                    diqa_core::Error::InvalidConfig(format!("config key {key:?}: {e}")).into()
                })
            })
            .transpose()
    }

    fn record<T: Serialize>(&mut self, key: &str, value: &T) {
        let json = serde_json::to_value(value).expect("settings serialize to JSON");
        self.effective.insert(key.to_string(), json);
    }

    pub fn pick<T>(&mut self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: DeserializeOwned + Serialize,
    {
        let value = match flag {
            Some(v) => v,
            None => self.lookup(key)?.unwrap_or(default),
        };
        self.record(key, &value);
        Ok(value)
    }

    pub fn pick_opt<T>(&mut self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: DeserializeOwned + Serialize,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => self.lookup(key)?,
        };
        self.record(key, &value);
        Ok(value)
    }

    /// A switch is on when given on the command line or set in the config.
    pub fn switch(&mut self, flag: bool, key: &str) -> Result<bool> {
        let value = flag || self.lookup(key)?.unwrap_or(false);
        self.record(key, &value);
        Ok(value)
    }

    /// Resolves a value without recording it (paths and worker counts stay
    /// out of manifests).
    pub fn pick_unrecorded<T: DeserializeOwned>(
        &self,
        flag: Option<T>,
        key: &str,
    ) -> Result<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.lookup(key),
        }
    }
}
