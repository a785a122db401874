//! Flat `key = value` configuration with `[section]` headers that prefix the
//! keys below them (`[train]` + `lr = 1e-3` is `train.lr`).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn new() -> Self {
        Config::default()
    }

    /// `#` starts a comment; blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {}: unterminated section header", i + 1)))?
                    .trim();
                if !valid_key(name) {
                    return Err(Error::Config(format!("line {}: bad section name `{name}`", i + 1)));
                }
                section = name.to_owned();
                continue;
            }
            let (k, v) = split_pair(line).map_err(|m| Error::Config(format!("line {}: {m}", i + 1)))?;
            let key = if section.is_empty() { k.to_owned() } else { format!("{section}.{k}") };
            cfg.entries.insert(key, v.to_owned());
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_owned(), value.to_string());
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    /// Applies a `dotted.key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = split_pair(pair).map_err(|m| Error::Config(format!("override `{pair}`: {m}")))?;
        self.entries.insert(k.to_owned(), v.to_owned());
        Ok(())
    }

    /// Values of `other` win.
    pub fn merge(&mut self, other: &Config) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Parsed value of `key`, or `default` when absent.
    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| Error::Config(format!("`{key} = {v}`: {e}"))),
        }
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse().map_err(|e| Error::Config(format!("`{key} = {v}`: {e}"))))
            .transpose()
    }

    /// Errors on any key outside `known`, catching misspelt settings.
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        match self.entries.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(Error::Config(format!("unknown setting `{k}`"))),
            None => Ok(()),
        }
    }
}

fn valid_key(k: &str) -> bool {
    !k.is_empty()
        && k.split('.').all(|p| {
            !p.is_empty() && p.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        })
}

fn split_pair(s: &str) -> std::result::Result<(&str, &str), String> {
    let (k, v) = s.split_once('=').ok_or("expected `key = value`")?;
    let (k, v) = (k.trim(), v.trim());
    if !valid_key(k) {
        return Err(format!("bad key `{k}`"));
    }
    Ok((k, v))
}

impl fmt::Display for Config {
    /// Top-level keys first, then one section per first key component.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut sections: BTreeMap<&str, Vec<(&str, &str)>> = BTreeMap::new();
        for (k, v) in &self.entries {
            match k.split_once('.') {
                None => writeln!(f, "{k} = {v}")?,
                Some((s, rest)) => sections.entry(s).or_default().push((rest, v)),
            }
        }
        for (s, kvs) in sections {
            writeln!(f, "\n[{s}]")?;
            for (k, v) in kvs {
                writeln!(f, "{k} = {v}")?;
            }
        }
        Ok(())
    }
}
