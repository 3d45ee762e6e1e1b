//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. List values are
//! comma-separated.

use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;

use crate::{io, Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: IndexMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<KeyValues> {
        let mut entries = IndexMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected `key = value`", n + 1))
            })?;
            let key = key.trim().to_string();
            if entries
                .insert(key.clone(), value.trim().to_string())
                .is_some()
            {
                return Err(Error::InvalidConfig(format!(
                    "line {}: duplicate key {key:?}",
                    n + 1
                )));
            }
        }
        Ok(KeyValues { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<KeyValues> {
        Self::parse(&io::read_to_string(path.as_ref())?)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {v:?}")))
            })
            .transpose()
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse()
                            .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {s:?}")))
                    })
                    .collect()
            })
            .transpose()
    }

    /// Errors on any key outside `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(Error::InvalidConfig(format!("unknown key {k:?}"))),
            None => Ok(()),
        }
    }
}
