//! `key = value` configuration files. `#` starts a comment; comments usually
//! carry the unit of the value.

use std::collections::BTreeMap;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {message}")]
pub struct ConfigError {
    /// 0 when the problem is not tied to a line (e.g. a missing key).
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValueConfig {
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyValueConfig {
    /// Parses every line, collecting all problems rather than stopping at the first.
    pub fn parse(text: &str) -> Result<Self, Vec<ConfigError>> {
        let mut entries = BTreeMap::new();
        let mut errors = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((k, v)) = content.split_once('=') else {
                errors.push(ConfigError { line, message: format!("expected 'key = value', found '{content}'") });
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || v.is_empty() {
                errors.push(ConfigError { line, message: "empty key or value".into() });
            } else if let Some((_, first)) = entries.insert(k.to_owned(), (v.to_owned(), line)) {
                errors.push(ConfigError { line, message: format!("duplicate key '{k}' (first on line {first})") });
            }
        }
        if errors.is_empty() {
            Ok(Self { entries })
        } else {
            Err(errors)
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |(_, l)| *l)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Keys of the form `prefix.<suffix>`, yielding `(suffix, value, line)`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str, usize)> + 'a {
        self.entries.iter().filter_map(move |(k, (v, l))| {
            k.strip_prefix(prefix).and_then(|s| s.strip_prefix('.')).map(|s| (s, v.as_str(), *l))
        })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let (v, line) = self
            .entries
            .get(key)
            .ok_or_else(|| ConfigError { line: 0, message: format!("missing key '{key}'") })?;
        v.parse().map_err(|e| ConfigError { line: *line, message: format!("{key}: {e}") })
    }

    /// A finite `f64`.
    pub fn number(&self, key: &str) -> Result<f64, ConfigError> {
        let v: f64 = self.get(key)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ConfigError { line: self.line_of(key), message: format!("{key}: value is not finite") })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values_and_comments() {
        let c = KeyValueConfig::parse("# header\na = 1.5 # m/s\nmortality.P01 = 10\nmortality.P02=20\n").unwrap();
        assert_eq!(c.number("a").unwrap(), 1.5);
        assert_eq!(c.line_of("a"), 2);
        let m: Vec<_> = c.with_prefix("mortality").map(|(k, v, _)| (k, v)).collect();
        assert_eq!(m, vec![("P01", "10"), ("P02", "20")]);
        assert!(c.number("missing").is_err());
    }

    #[test]
    fn collects_all_errors() {
        let errs = KeyValueConfig::parse("a = 1\nno equals\na = 2\n = 3\n").unwrap_err();
        assert_eq!(errs.iter().map(|e| e.line).collect::<Vec<_>>(), vec![2, 3, 4]);
    }
}
