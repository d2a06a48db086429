//! The `key = value` text grammar shared by manifests, config files and
//! checkpoint metadata.
//!
//! One entry per line. Blank lines and lines starting with `#` are ignored.
//! Keys and values are trimmed; a repeated key is an error.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    source: String,
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(source: &str, text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::validation(source, Some(i + 1), "expected `key = value`"));
            };
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::validation(source, Some(i + 1), "empty key"));
            }
            if entries.insert(key.to_string(), (i + 1, v.trim().to_string())).is_some() {
                return Err(Error::validation(source, Some(i + 1), format!("duplicate key `{key}`")));
            }
        }
        Ok(Self {
            source: source.to_string(),
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&path.display().to_string(), &text)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::validation(&self.source, None, format!("missing key `{key}`")))
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse::<T>().map(Some).map_err(|e| {
                Error::validation(&self.source, Some(*line), format!("bad value for `{key}`: {e}"))
            }),
        }
    }

    pub fn require_parsed<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.parse_value(key)?
            .ok_or_else(|| Error::validation(&self.source, None, format!("missing key `{key}`")))
    }

    /// Rejects any key not in `allowed`, naming the offending line.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        for (k, (line, _)) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::validation(&self.source, Some(*line), format!("unknown key `{k}`")));
            }
        }
        Ok(())
    }
}

/// Renders entries in the given order, one `key = value` per line.
pub fn render(entries: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (k, v) in entries {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(v);
        out.push('\n');
    }
    out
}
