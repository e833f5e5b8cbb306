//! Flat `key = value` configuration files with dotted section names
//! (`model.a`, `forcing.kind`).
//!
//! Every run is fully determined by the configuration plus the seed.
//! Missing keys take their documented defaults; keys that no command
//! consumed are rejected so typos cannot silently change a run.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

#[derive(Debug)]
pub enum ConfigError {
    Io(String),
    Parse { line: usize, content: String },
    Duplicate { key: String },
    Invalid { key: String, message: String },
    UnknownKeys(Vec<String>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(e) => write!(f, "cannot read config: {e}"),
            ConfigError::Parse { line, content } => {
                write!(f, "config line {line} is not `key = value`: {content:?}")
            }
            ConfigError::Duplicate { key } => write!(f, "config key `{key}` appears twice"),
            ConfigError::Invalid { key, message } => {
                write!(f, "config key `{key}`: {message}")
            }
            ConfigError::UnknownKeys(keys) => {
                write!(f, "unknown config keys: {}", keys.join(", "))
            }
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
    consumed: RefCell<BTreeSet<String>>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            None => Ok(Config::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError::Io(format!("{}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Parse { line: idx + 1, content: raw.to_string() });
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::Parse { line: idx + 1, content: raw.to_string() });
            }
            if values.insert(key.clone(), value).is_some() {
                return Err(ConfigError::Duplicate { key });
            }
        }
        Ok(Config { values, consumed: RefCell::new(BTreeSet::new()) })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        let v = self.values.get(key);
        if v.is_some() {
            self.consumed.borrow_mut().insert(key.to_string());
        }
        v.map(|s| s.as_str())
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(s) => s.parse().map_err(|_| ConfigError::Invalid {
                key: key.into(),
                message: format!("expected a number, got {s:?}"),
            }),
        }
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(s) => s.parse().map_err(|_| ConfigError::Invalid {
                key: key.into(),
                message: format!("expected a nonnegative integer, got {s:?}"),
            }),
        }
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|_| ConfigError::Invalid {
                    key: key.into(),
                    message: format!("expected an unsigned integer, got {s:?}"),
                }),
        }
    }

    pub fn get_string(&self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }

    pub fn get_f64_list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(s) => s
                .split(',')
                .map(|part| {
                    part.trim().parse().map_err(|_| ConfigError::Invalid {
                        key: key.into(),
                        message: format!("expected comma-separated numbers, got {s:?}"),
                    })
                })
                .collect(),
        }
    }

    /// Validate a value against a named constraint, attaching the key
    /// path to the failure.
    pub fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid { key: key.into(), message: message.into() }
    }

    /// Reject keys that no getter consumed.
    pub fn finish(&self) -> Result<(), ConfigError> {
        let consumed = self.consumed.borrow();
        let unknown: Vec<String> =
            self.values.keys().filter(|k| !consumed.contains(*k)).cloned().collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::UnknownKeys(unknown))
        }
    }

    /// Sorted `(key, value)` pairs as given in the file, for report
    /// echoes.
    pub fn echo(&self) -> Vec<(String, String)> {
        self.values.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_comments_and_defaults() {
        let c = Config::parse("# comment\nhurst = 0.8\nmodel.a = -1.5\n\nsteps=128\n").unwrap();
        assert_eq!(c.get_f64("hurst", 0.75).unwrap(), 0.8);
        assert_eq!(c.get_f64("model.a", 0.0).unwrap(), -1.5);
        assert_eq!(c.get_usize("steps", 64).unwrap(), 128);
        assert_eq!(c.get_f64("model.b", 1.0).unwrap(), 1.0);
        c.finish().unwrap();
    }

    #[test]
    fn rejects_unknown_and_malformed_keys() {
        let c = Config::parse("hurst = 0.8\nmodell.a = 1.0\n").unwrap();
        let _ = c.get_f64("hurst", 0.75).unwrap();
        let err = c.finish().unwrap_err();
        assert!(err.to_string().contains("modell.a"));

        assert!(Config::parse("just a line\n").is_err());
        assert!(Config::parse("a = 1\na = 2\n").is_err());
    }

    #[test]
    fn typed_errors_name_the_key() {
        let c = Config::parse("steps = many\n").unwrap();
        let err = c.get_usize("steps", 4).unwrap_err();
        assert!(err.to_string().contains("steps"));
    }

    #[test]
    fn lists_parse() {
        let c = Config::parse("p = 1, 2, 4\n").unwrap();
        assert_eq!(c.get_f64_list("p", &[1.0]).unwrap(), vec![1.0, 2.0, 4.0]);
    }
}
