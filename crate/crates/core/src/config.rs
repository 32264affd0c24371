//! Minimal `key = value` configuration text.
//!
//! One pair per line; `#` starts a comment; blank lines are ignored.

use std::str::FromStr;

use crate::error::{Error, Result};

/// Parses pairs in file order. Duplicate keys are an error.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("line {}: expected key = value", n + 1)))?;
        let k = k.trim().to_string();
        if k.is_empty() {
            return Err(Error::invalid(format!("line {}: empty key", n + 1)));
        }
        if out.iter().any(|(existing, _)| *existing == k) {
            return Err(Error::invalid(format!("duplicate key '{k}'")));
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}

/// Comma-separated list, empty items dropped.
pub fn list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

pub fn number<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("invalid value '{value}' for key '{key}'")))
}

pub fn numbers<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    list(value).iter().map(|v| number(key, v)).collect()
}
