//! Flat `key = value` configuration files with optional `[section]` headers.
//!
//! ```text
//! # comment
//! seed = 3
//!
//! [train]
//! method = fairalm
//! eta = 2
//! ```
//!
//! Keys before the first header belong to the unnamed section `""`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown config key `{key}`")]
    UnknownKey { key: String },
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Types that can be configured one `key = value` pair at a time.
pub trait KeyValueConfig {
    /// Applies one setting. Unknown keys are errors.
    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError>;

    /// Every setting in a fixed order, formatted so that feeding the pairs
    /// back through [`KeyValueConfig::set`] reproduces the value.
    fn pairs(&self) -> Vec<(String, String)>;

    fn apply_all<'a, I>(&mut self, pairs: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Parses `value` as `T`, mapping failure to [`ConfigError::InvalidValue`].
pub fn parse_value<T>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T: FromStr,
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse::<T>()
        .map_err(|e| ConfigError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: e.to_string(),
        })
}

/// Splits a `key=value` override.
pub fn split_override(s: &str) -> Result<(&str, &str), ConfigError> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim(), v.trim())),
        _ => Err(ConfigError::Syntax {
            line: 0,
            message: format!("override `{s}` is not of the form key=value"),
        }),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValueFile {
    sections: BTreeMap<String, Vec<(String, String)>>,
}

impl KeyValueFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut file = KeyValueFile::default();
        let mut current = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                    line: idx + 1,
                    message: "unterminated section header".into(),
                })?;
                current = name.trim().to_string();
                file.sections.entry(current.clone()).or_default();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: idx + 1,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            let key = k.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line: idx + 1,
                    message: "empty key".into(),
                });
            }
            let entries = file.sections.entry(current.clone()).or_default();
            let value = v.trim().to_string();
            match entries.iter_mut().find(|(existing, _)| existing == key) {
                Some(slot) => slot.1 = value,
                None => entries.push((key.to_string(), value)),
            }
        }
        Ok(file)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Entries of `section` in file order; empty when the section is absent.
    pub fn section(&self, name: &str) -> impl Iterator<Item = (&str, &str)> {
        self.sections
            .get(name)
            .into_iter()
            .flatten()
            .map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Section names in sorted order, including `""` when present.
    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.keys().map(String::as_str)
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.sections.contains_key(name)
    }

    pub fn insert(&mut self, section: &str, key: &str, value: &str) {
        let entries = self.sections.entry(section.to_string()).or_default();
        match entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value.to_string(),
            None => entries.push((key.to_string(), value.to_string())),
        }
    }
}

impl fmt::Display for KeyValueFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (name, entries) in &self.sections {
            if !name.is_empty() {
                if !first {
                    writeln!(f)?;
                }
                writeln!(f, "[{name}]")?;
            }
            for (k, v) in entries {
                writeln!(f, "{k} = {v}")?;
            }
            first = false;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_comments() {
        let f = KeyValueFile::parse("a = 1\n# c\n[train]\neta=2\n eta = 3 \n[sweep]\n").unwrap();
        assert_eq!(f.section("").collect::<Vec<_>>(), vec![("a", "1")]);
        assert_eq!(f.section("train").collect::<Vec<_>>(), vec![("eta", "3")]);
        assert!(f.has_section("sweep"));
        assert_eq!(f.section("missing").count(), 0);
    }

    #[test]
    fn syntax_errors_carry_line() {
        match KeyValueFile::parse("a = 1\nnonsense\n") {
            Err(ConfigError::Syntax { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(KeyValueFile::parse("[open\n").is_err());
    }

    #[test]
    fn display_reparses() {
        let mut f = KeyValueFile::default();
        f.insert("", "x", "1");
        f.insert("train", "eta", "0.5");
        let again = KeyValueFile::parse(&f.to_string()).unwrap();
        assert_eq!(f, again);
    }

    #[test]
    fn override_split() {
        assert_eq!(split_override("eta=2").unwrap(), ("eta", "2"));
        assert!(split_override("=2").is_err());
        assert!(split_override("eta").is_err());
    }
}
