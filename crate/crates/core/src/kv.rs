//! Plain-text `key = value` files used for tracker configs and synthetic
//! sequence specs. `#` starts a comment; blank lines are ignored.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    path: PathBuf,
    /// Value and 1-based line number per key.
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::parse(&path, i + 1, format!("expected key = value, got {line:?}")));
            };
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::parse(&path, i + 1, "empty key"));
            }
            if entries.insert(key.clone(), (value.trim().to_string(), i + 1)).is_some() {
                return Err(Error::parse(&path, i + 1, format!("duplicate key {key:?}")));
            }
        }
        Ok(Self { path, entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    /// Parses `key` if present.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|e| Error::parse(&self.path, *line, format!("{key}: {e}"))),
        }
    }

    /// Overwrites `slot` when `key` is present.
    pub fn set<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    /// Fails on the first key outside `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        for (key, (_, line)) in &self.entries {
            if !known.contains(&key.as_str()) {
                return Err(Error::parse(&self.path, *line, format!("unknown key {key:?}")));
            }
        }
        Ok(())
    }

    pub fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |(_, l)| *l)
    }
}
