//! Flat `key = value` settings files.
//!
//! One setting per line; blank lines and lines starting with `#` are
//! ignored. Keys are the long command-line flag names with `-` replaced by
//! `_` (see [`KEYS`]). Values set later, e.g. from command-line flags,
//! override values read from the file.
//!
//! ```text
//! # iris.conf
//! input = data/iris.csv
//! label_column = species
//! trials = 200
//! variant = pair_one_two
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Every key a settings file may contain.
pub const KEYS: &[&str] = &[
    "input",
    "delimiter",
    "header",
    "label_column",
    "missing",
    "impute",
    "pca",
    "trials",
    "seed",
    "variant",
    "init_low",
    "init_high",
    "max_iterations",
    "alpha_floor",
    "objective_tolerance",
    "step_tolerance",
    "stationarity_tolerance",
    "clusters",
    "kmeans_restarts",
    "kmeans_seed",
    "kmeans_max_iterations",
    "kmeans_tolerance",
    "bins",
    "out",
    "on_the_fly",
    "memory_budget",
];

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut settings = Self::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Usage(format!(
                    "config line {}: expected `key = value`, got `{line}`",
                    no + 1
                )));
            };
            let key = key.trim().replace('-', "_");
            if !KEYS.contains(&key.as_str()) {
                return Err(Error::Usage(format!("config line {}: unknown key `{key}`", no + 1)));
            }
            settings.values.insert(key, value.trim().to_string());
        }
        Ok(settings)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets `key`, replacing any earlier value.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        debug_assert!(KEYS.contains(&key), "unknown settings key {key}");
        self.values.insert(key.to_string(), value.to_string());
    }

    /// Sets `key` only when `value` is present.
    pub fn set_opt<T: ToString>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::Usage(format!("invalid value `{v}` for `{key}`")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Booleans accept `true/false`, `yes/no`, `on/off` and `1/0`.
    pub fn flag(&self, key: &str) -> Result<Option<bool>> {
        self.raw(key)
            .map(|v| match v.to_ascii_lowercase().as_str() {
                "true" | "yes" | "on" | "1" => Ok(true),
                "false" | "no" | "off" | "0" => Ok(false),
                _ => Err(Error::Usage(format!("invalid boolean `{v}` for `{key}`"))),
            })
            .transpose()
    }
}
