//! `key = value` text files with `#` comments.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Splits `text` into entries, rejecting malformed lines and repeated keys.
pub(crate) fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| Error::parse(line, format!("expected `key = value`, got `{body}`")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::parse(line, "empty key"));
        }
        if out.iter().any(|e| e.key == key) {
            return Err(Error::parse(line, format!("duplicate key `{key}`")));
        }
        out.push(Entry {
            line,
            key: key.to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(out)
}

impl Entry {
    pub fn f64(&self) -> Result<f64> {
        crate::hexfloat::parse(&self.value)
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::parse(self.line, format!("`{}` is not a finite number", self.value)))
    }

    pub fn usize(&self) -> Result<usize> {
        self.value
            .parse()
            .map_err(|_| Error::parse(self.line, format!("`{}` is not a non-negative integer", self.value)))
    }

    pub fn u64(&self) -> Result<u64> {
        self.value
            .parse()
            .map_err(|_| Error::parse(self.line, format!("`{}` is not a non-negative integer", self.value)))
    }

    pub fn floats(&self, n: usize) -> Result<Vec<f64>> {
        let vals: Option<Vec<f64>> = self
            .value
            .split_whitespace()
            .map(|t| crate::hexfloat::parse(t).filter(|v| v.is_finite()))
            .collect();
        match vals {
            Some(v) if v.len() == n => Ok(v),
            _ => Err(Error::parse(self.line, format!("expected {n} finite numbers for `{}`", self.key))),
        }
    }
}
