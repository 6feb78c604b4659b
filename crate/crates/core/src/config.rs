//! Flat `key = value` configuration files (`#` starts a comment).

use std::str::FromStr;

use crate::error::{Error, Result};

/// Parses config text into ordered `(key, value)` pairs.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        pairs.push((key.to_owned(), value.trim().to_owned()));
    }
    Ok(pairs)
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

/// Types whose fields can be overridden by name.
pub trait Configurable {
    /// Applies one override; unknown keys are an error.
    fn set(&mut self, key: &str, value: &str) -> Result<()>;

    /// Checks the invariants of the current values.
    fn validate(&self) -> Result<()>;

    /// Applies every pair whose key starts with `prefix.`, leaving the rest.
    fn apply_section(&mut self, prefix: &str, pairs: &[(String, String)]) -> Result<()> {
        for (k, v) in pairs {
            if let Some(field) = k.strip_prefix(prefix).and_then(|r| r.strip_prefix('.')) {
                self.set(field, v)?;
            }
        }
        self.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_and_comments() {
        let pairs = parse_kv("# header\n a.b = 1.5 \n\nc = x # trailing\n").unwrap();
        assert_eq!(pairs, vec![("a.b".into(), "1.5".into()), ("c".into(), "x".into())]);
        assert!(parse_kv("novalue\n").is_err());
        assert!(parse_kv(" = 3\n").is_err());
    }
}
