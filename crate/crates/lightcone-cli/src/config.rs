//! `key = value` run configuration files. Values from the command line
//! override file values, which override built-in defaults; unknown keys are
//! rejected so stale configs fail loudly.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use lightcone::{Error, Result};

/// Parsed configuration file: ordered `(key, value)` pairs.
#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    entries: Vec<(String, String)>,
}

impl FileConfig {
    pub fn empty() -> Self {
        FileConfig::default()
    }

    /// Reads and parses a config file. Lines are `key = value`; blank lines
    /// and `#` comments are ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidParam(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidParam(format!(
                    "config line {} is not 'key = value': {line}",
                    lineno + 1
                )));
            };
            entries.push((key.trim().to_string(), value.trim().to_string()));
        }
        Ok(FileConfig { entries })
    }

    /// Rejects keys outside `allowed` and a `command` entry naming a
    /// different subcommand.
    pub fn validate(&self, command: &str, allowed: &[&str]) -> Result<()> {
        for (key, value) in &self.entries {
            if key == "command" {
                if value != command {
                    return Err(Error::InvalidParam(format!(
                        "config is for command '{value}', not '{command}'"
                    )));
                }
                continue;
            }
            if key == "version" {
                continue;
            }
            if !allowed.contains(&key.as_str()) {
                return Err(Error::InvalidParam(format!(
                    "unknown config key '{key}' for command '{command}'"
                )));
            }
        }
        Ok(())
    }

    /// Last value for `key`, if any.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// All values for a repeatable `key`, in file order.
    pub fn get_all(&self, key: &str) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .collect()
    }

    /// Last value for `key` parsed as `T`.
    pub fn parse<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                Error::InvalidParam(format!("config key '{key}': cannot parse '{raw}': {e}"))
            }),
        }
    }
}

/// CLI value if present, else file value, else the default.
pub fn resolve<T>(cli: Option<T>, file: Option<T>, default: T) -> T {
    cli.or(file).unwrap_or(default)
}

/// CLI value if present, else file value.
pub fn resolve_opt<T>(cli: Option<T>, file: Option<T>) -> Option<T> {
    cli.or(file)
}

/// Parses a comma-separated list of numbers.
pub fn parse_f64_list(raw: &str, what: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|e| {
                Error::InvalidParam(format!("{what}: cannot parse '{}': {e}", s.trim()))
            })
        })
        .collect()
}
