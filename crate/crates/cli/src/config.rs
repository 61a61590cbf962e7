//! Line-based `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are matched
//! with `-` and `_` treated alike, so `max-arcs` and `max_arcs` name the
//! same setting as the `--max-arcs` flag.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};

/// A malformed configuration file or value.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

macro_rules! bail {
    ($($t:tt)*) => {
        return Err(ConfigError(format!($($t)*)).into())
    };
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

fn canonical(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {}: expected `key = value`, got {line:?}", i + 1);
            };
            let key = canonical(key);
            if key.is_empty() {
                bail!("config line {}: empty key", i + 1);
            }
            if values.insert(key.clone(), value.trim().to_owned()).is_some() {
                bail!("config line {}: duplicate key {key:?}", i + 1);
            }
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(&canonical(key)).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|e| ConfigError(format!("config key {key}: cannot parse {v:?}: {e}")).into())
            })
            .transpose()
    }

    /// Flag value if given, else the configured value, else `default`.
    pub fn resolve<T: FromStr>(&self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    /// Like [`resolve`](Self::resolve) without a default.
    pub fn resolve_opt<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves() {
        let cfg = ConfigFile::parse("# comment\nbeam = 20\n\nmax-arcs=3\nname = a b\n").unwrap();
        assert_eq!(cfg.get::<usize>("beam").unwrap(), Some(20));
        assert_eq!(cfg.get::<usize>("max_arcs").unwrap(), Some(3));
        assert_eq!(cfg.raw("name"), Some("a b"));
        assert_eq!(cfg.resolve("beam", Some(7), 50).unwrap(), 7);
        assert_eq!(cfg.resolve("beam", None, 50).unwrap(), 20);
        assert_eq!(cfg.resolve("groups", None, 1usize).unwrap(), 1);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(ConfigFile::parse("beam 20").is_err());
        assert!(ConfigFile::parse("= 3").is_err());
        assert!(ConfigFile::parse("a = 1\na = 2").is_err());
        let cfg = ConfigFile::parse("beam = wide").unwrap();
        assert!(cfg.get::<usize>("beam").is_err());
    }
}
