//! Plain-text `key = value` configuration shared by prior constants,
//! sampler settings and reporting thresholds.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are kept so that
//! front ends can define their own.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("{source}:{}", i + 1), "expected `key = value`"))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::parse(format!("{source}:{}", i + 1), "empty key"));
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::parse(
                    format!("{source}:{}", i + 1),
                    format!("key `{key}` set twice"),
                ));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Typed lookup; `Ok(None)` when the key is absent.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::Config(format!("cannot parse `{key} = {v}`")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let mut c = Config::parse("# priors\nC1 = 2.5\n\n seed=42 # inline\n", "mem").unwrap();
        assert_eq!(c.get::<f64>("C1").unwrap(), Some(2.5));
        assert_eq!(c.get::<u64>("seed").unwrap(), Some(42));
        assert_eq!(c.get::<u64>("missing").unwrap(), None);
        c.set("seed", 7);
        assert_eq!(c.get_or("seed", 0u64).unwrap(), 7);
        assert_eq!(Config::parse(&c.to_text(), "round").unwrap(), c);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(Config::parse("C1 2.5\n", "mem").is_err());
        assert!(Config::parse("a = 1\na = 2\n", "mem").is_err());
        assert!(Config::parse("C1 = x\n", "mem").unwrap().get::<f64>("C1").is_err());
    }
}
