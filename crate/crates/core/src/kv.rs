//! Flat `key = value` documents used for architecture and training configs.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Keys may repeat (stage lists), and order is preserved.

use std::collections::HashSet;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Clone, Debug)]
pub struct KvDoc {
    origin: String,
    entries: Vec<Entry>,
}

impl KvDoc {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    origin: origin.to_string(),
                    line: i + 1,
                    msg: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    origin: origin.to_string(),
                    line: i + 1,
                    msg: "empty key".into(),
                });
            }
            entries.push(Entry {
                key: key.to_string(),
                value: v.trim().to_string(),
                line: i + 1,
            });
        }
        Ok(KvDoc {
            origin: origin.to_string(),
            entries,
        })
    }

    pub fn origin(&self) -> &str {
        &self.origin
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn error(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            origin: self.origin.clone(),
            line,
            msg: msg.into(),
        }
    }

    /// Last entry for `key`; later lines override earlier ones.
    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().rev().find(|e| e.key == key)
    }

    pub fn all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a Entry> + 'a {
        self.entries.iter().filter(move |e| e.key == key)
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).map_or(default, |e| e.value.as_str())
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse()
                .map(Some)
                .map_err(|_| self.error(e.line, format!("bad value `{}` for `{key}`", e.value))),
        }
    }

    pub fn parsed_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn required<T: FromStr>(&self, key: &str) -> Result<T> {
        self.parsed(key)?
            .ok_or_else(|| self.error(0, format!("missing required key `{key}`")))
    }

    /// Fails on the first key not in `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        let known: HashSet<&str> = known.iter().copied().collect();
        match self.entries.iter().find(|e| !known.contains(e.key.as_str())) {
            Some(e) => Err(self.error(e.line, format!("unknown key `{}`", e.key))),
            None => Ok(()),
        }
    }
}

/// Splits `a=1 b=2` into pairs.
pub fn inline_pairs(value: &str) -> std::result::Result<Vec<(&str, &str)>, String> {
    value
        .split_whitespace()
        .map(|tok| {
            tok.split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| format!("expected `name=value`, got `{tok}`"))
        })
        .collect()
}

pub fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "yes" | "on" | "1" => Some(true),
        "false" | "no" | "off" | "0" => Some(false),
        _ => None,
    }
}

/// `3x224x224` style extents.
pub fn parse_extent(s: &str) -> Option<Vec<usize>> {
    s.split('x').map(|p| p.trim().parse().ok()).collect()
}
