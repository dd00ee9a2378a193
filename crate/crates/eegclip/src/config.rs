//! Flat INI-style configuration files: `[section]` headers, `key = value`
//! pairs, `#` comments. Parsing is strict; duplicate sections or keys are
//! errors, and consumers reject unknown keys via [`SectionReader::expect_keys`]
//! so typos fail loudly instead of silently using a default.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::{Error, Result};

/// A parsed file: sections in order of appearance, keys in order within
/// each section.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Ini {
    sections: Vec<(String, Vec<(String, String)>)>,
    origin: String,
}

impl Ini {
    pub fn from_file(path: &Path) -> Result<Ini> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ini::parse(&text, &path.display().to_string())
    }

    /// Parses `text`; `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Ini> {
        let mut sections: Vec<(String, Vec<(String, String)>)> = Vec::new();
        let fail = |lineno: usize, msg: String| {
            Err(Error::Config(format!("{origin}:{lineno}: {msg}")))
        };
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let Some(name) = name.strip_suffix(']') else {
                    return fail(lineno, format!("unterminated section header {line:?}"));
                };
                let name = name.trim();
                if name.is_empty() {
                    return fail(lineno, "empty section name".into());
                }
                if sections.iter().any(|(n, _)| n == name) {
                    return fail(lineno, format!("duplicate section [{name}]"));
                }
                sections.push((name.to_string(), Vec::new()));
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return fail(lineno, format!("expected `key = value`, got {line:?}"));
            };
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return fail(lineno, "empty key".into());
            }
            let Some((_, pairs)) = sections.last_mut() else {
                return fail(lineno, format!("key {key:?} appears before any [section]"));
            };
            if pairs.iter().any(|(k, _)| k == key) {
                return fail(lineno, format!("duplicate key {key:?}"));
            }
            pairs.push((key.to_string(), value.to_string()));
        }
        Ok(Ini {
            sections,
            origin: origin.to_string(),
        })
    }

    pub fn section_names(&self) -> Vec<&str> {
        self.sections.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.sections.iter().any(|(n, _)| n == name)
    }

    /// Reader over one section; the section may be absent, in which case
    /// every key falls back to its default.
    pub fn section(&self, name: &str) -> SectionReader<'_> {
        static EMPTY: Vec<(String, String)> = Vec::new();
        let pairs = self
            .sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p)
            .unwrap_or(&EMPTY);
        SectionReader {
            origin: &self.origin,
            name: name.to_string(),
            pairs,
        }
    }

    pub fn require_section(&self, name: &str) -> Result<SectionReader<'_>> {
        if !self.has_section(name) {
            return Err(Error::Config(format!(
                "{}: missing section [{name}]",
                self.origin
            )));
        }
        Ok(self.section(name))
    }

    /// Errors on any section not in `allowed`.
    pub fn expect_sections(&self, allowed: &[&str]) -> Result<()> {
        for (name, _) in &self.sections {
            if !allowed.contains(&name.as_str()) {
                return Err(Error::Config(format!(
                    "{}: unknown section [{name}]; expected one of {allowed:?}",
                    self.origin
                )));
            }
        }
        Ok(())
    }
}

/// Typed access to one section's keys.
pub struct SectionReader<'a> {
    origin: &'a str,
    name: String,
    pairs: &'a [(String, String)],
}

impl<'a> SectionReader<'a> {
    pub fn get(&self, key: &str) -> Option<&'a str> {
        self.pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn context(&self, key: &str) -> String {
        format!("{}: [{}] {key}", self.origin, self.name)
    }

    pub fn require(&self, key: &str) -> Result<&'a str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("{}: missing", self.context(key))))
    }

    /// Parses a required value.
    pub fn parse_req<T: FromStr>(&self, key: &str) -> Result<T> {
        self.parse_value(key, self.require(key)?)
    }

    /// Parses an optional value, `default` when the key is absent.
    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            Some(v) => self.parse_value(key, v),
            None => Ok(default),
        }
    }

    pub fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key).map(|v| self.parse_value(key, v)).transpose()
    }

    /// Parses a required comma-separated list.
    pub fn parse_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.require(key)?
            .split(',')
            .map(|item| self.parse_value(key, item.trim()))
            .collect()
    }

    fn parse_value<T: FromStr>(&self, key: &str, raw: &str) -> Result<T> {
        raw.parse().map_err(|_| {
            Error::Config(format!(
                "{}: cannot parse {raw:?} as {}",
                self.context(key),
                std::any::type_name::<T>()
            ))
        })
    }

    /// Errors on any key not in `allowed`.
    pub fn expect_keys(&self, allowed: &[&str]) -> Result<()> {
        for (key, _) in self.pairs {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "{}: unknown key; expected one of {allowed:?}",
                    self.context(key)
                )));
            }
        }
        Ok(())
    }
}

/// Produces files [`Ini::parse`] reads back. Values must be single-line.
#[derive(Debug, Default)]
pub struct IniWriter {
    out: String,
}

impl IniWriter {
    pub fn new() -> Self {
        IniWriter::default()
    }

    pub fn section(&mut self, name: &str) -> &mut Self {
        debug_assert!(!name.contains(['\n', '[', ']']));
        if !self.out.is_empty() {
            self.out.push('\n');
        }
        self.out.push_str(&format!("[{name}]\n"));
        self
    }

    pub fn kv(&mut self, key: &str, value: impl Display) -> &mut Self {
        let value = value.to_string();
        debug_assert!(!key.contains(['\n', '=']) && !value.contains('\n'));
        self.out.push_str(&format!("{key} = {value}\n"));
        self
    }

    pub fn finish(self) -> String {
        self.out
    }
}
