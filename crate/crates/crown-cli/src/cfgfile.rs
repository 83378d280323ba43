//! Plain `key = value` settings files. Values here fill in flags the
//! user omitted; explicit flags always win, and built-in defaults fill
//! whatever remains. Keys use the same spelling as the long flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crown_core::{Error, Result};

#[derive(Debug, Default)]
pub struct FileConfig {
    entries: BTreeMap<String, String>,
}

impl FileConfig {
    /// Reads a config file; `None` yields an empty config. Lines are
    /// `key = value`, blank, or `#` comments.
    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)?;
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::parse_at_line(
                    i + 1,
                    format!("expected `key = value`, got {raw:?}"),
                ));
            };
            let (key, value) = (key.trim().to_string(), value.trim().to_string());
            if key.is_empty() {
                return Err(Error::parse_at_line(i + 1, "empty key"));
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(Error::parse_at_line(i + 1, format!("duplicate key `{key}`")));
            }
        }
        Ok(FileConfig { entries })
    }

    /// Removes and parses one key, so [`FileConfig::finish`] can flag
    /// whatever the command did not recognize.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::invalid(format!("config key `{key}`: cannot parse {v:?}: {e}"))),
        }
    }

    /// Rejects any key no [`take`](FileConfig::take) consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_keys().next() {
            None => Ok(()),
            Some(key) => Err(Error::invalid(format!("unknown config key `{key}`"))),
        }
    }
}

/// Flag beats config file beats built-in default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
