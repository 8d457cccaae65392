//! Plain-text `key = value` documents.
//!
//! One entry per line; blank lines and lines starting with `#` are ignored.
//! Keys are unique. Consumers take the keys they understand and anything
//! left over is rejected, so typos never pass silently.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", lineno + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Removes and parses `key` if present.
    pub fn take<V: FromStr>(&mut self, key: &str) -> Result<Option<V>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("invalid value `{raw}` for `{key}`"))),
        }
    }

    /// Overwrites `slot` when `key` is present.
    pub fn take_into<V: FromStr>(&mut self, key: &str, slot: &mut V) -> Result<()> {
        if let Some(v) = self.take(key)? {
            *slot = v;
        }
        Ok(())
    }

    /// Fails if any key was not consumed.
    pub fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            return Ok(());
        }
        let keys: Vec<&str> = self.entries.keys().map(String::as_str).collect();
        Err(Error::Config(format!("unknown keys: {}", keys.join(", "))))
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_take_finish() {
        let mut kv = KeyValues::parse("# comment\na = 3\n\nb=x y\n").unwrap();
        assert_eq!(kv.take::<u32>("a").unwrap(), Some(3));
        assert_eq!(kv.take::<String>("b").unwrap().as_deref(), Some("x y"));
        assert_eq!(kv.take::<u32>("c").unwrap(), None);
        kv.finish().unwrap();
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        let kv = KeyValues::parse("a = 1\nzz = 2").unwrap();
        assert!(matches!(kv.finish(), Err(Error::Config(m)) if m.contains("a, zz")));
        assert!(KeyValues::parse("a = 1\na = 2").is_err());
        assert!(KeyValues::parse("no equals sign").is_err());
        let mut kv = KeyValues::parse("n = abc").unwrap();
        assert!(kv.take::<usize>("n").is_err());
    }
}
