//! Plain-text `key=value` configuration files.
//!
//! One format serves training, data, and attack configuration. Lines hold
//! `key = value` pairs; `#` starts a comment. Consumers take the keys they
//! recognize; whatever remains unclaimed at the end is an error, so typos
//! never pass silently.

use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown config key `{key}` (line {line})")]
    UnknownKey { key: String, line: usize },
    #[error("config key `{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parsed key=value entries with consumption tracking.
#[derive(Clone, Debug, Default)]
pub struct ConfigMap {
    entries: BTreeMap<String, (String, usize)>,
    consumed: BTreeMap<String, bool>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (k, v) = trimmed.split_once('=').ok_or_else(|| ConfigError::Parse {
                line,
                message: format!("expected `key = value`, got `{trimmed}`"),
            })?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::Parse { line, message: "empty key".into() });
            }
            if entries.contains_key(&key) {
                return Err(ConfigError::Parse {
                    line,
                    message: format!("duplicate key `{key}`"),
                });
            }
            entries.insert(key, (v.trim().to_string(), line));
        }
        Ok(ConfigMap { entries, consumed: BTreeMap::new() })
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Applies a `key=value` override (as from a command-line `--set`).
    pub fn set_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| ConfigError::Parse {
            line: 0,
            message: format!("override must be `key=value`, got `{assignment}`"),
        })?;
        self.entries
            .insert(k.trim().to_string(), (v.trim().to_string(), 0));
        Ok(())
    }

    /// Raw lookup; marks the key consumed.
    pub fn take(&mut self, key: &str) -> Option<String> {
        let hit = self.entries.get(key).map(|(v, _)| v.clone());
        if hit.is_some() {
            self.consumed.insert(key.to_string(), true);
        }
        hit
    }

    pub fn take_parsed<T: std::str::FromStr>(
        &mut self,
        key: &str,
        default: T,
    ) -> Result<T, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                message: format!("cannot parse `{v}`"),
            }),
        }
    }

    pub fn take_bool(&mut self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => match v.as_str() {
                "true" | "yes" | "1" | "on" => Ok(true),
                "false" | "no" | "0" | "off" => Ok(false),
                other => Err(ConfigError::BadValue {
                    key: key.to_string(),
                    message: format!("expected a boolean, got `{other}`"),
                }),
            },
        }
    }

    /// Comma-separated list of values.
    pub fn take_list<T: std::str::FromStr>(
        &mut self,
        key: &str,
        default: Vec<T>,
    ) -> Result<Vec<T>, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) if v.is_empty() || v == "-" => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|t| {
                    t.trim().parse().map_err(|_| ConfigError::BadValue {
                        key: key.to_string(),
                        message: format!("cannot parse list item `{t}`"),
                    })
                })
                .collect(),
        }
    }

    /// Errors on the first key no consumer claimed.
    pub fn ensure_consumed(&self) -> Result<(), ConfigError> {
        for (key, (_, line)) in &self.entries {
            if !self.consumed.contains_key(key) {
                return Err(ConfigError::UnknownKey { key: key.clone(), line: *line });
            }
        }
        Ok(())
    }
}

/// FNV-1a 64-bit digest as lowercase hex, used to fingerprint resolved
/// configurations inside checkpoints and manifests.
pub fn digest(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in text.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}
