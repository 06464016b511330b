//! Flat `key = value` configuration files.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Every key must be consumed by the command that reads the file, so a
//! misspelt key is an error rather than a silent default.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    value: String,
    /// Source line, 0 for values set programmatically.
    line: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlatConfig {
    name: String,
    entries: BTreeMap<String, Entry>,
}

impl FlatConfig {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            entries: BTreeMap::new(),
        }
    }

    pub fn parse(text: &str, name: &str) -> Result<Self> {
        let mut cfg = Self::new(name);
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: name.to_string(),
                line: n + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(err("empty key".into()));
            }
            let entry = Entry {
                value: v.to_string(),
                line: n + 1,
            };
            if cfg.entries.insert(k.to_string(), entry).is_some() {
                return Err(err(format!("duplicate key `{k}`")));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Sets or overrides `key`.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.into(),
                line: 0,
            },
        );
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Removes and returns `key`.
    pub fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|e| e.value)
    }

    /// Removes `key` and parses it.
    pub fn take_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse()
                .map(Some)
                .map_err(|err| self.error(key, e.line, format!("`{}`: {err}", e.value))),
        }
    }

    fn error(&self, key: &str, line: usize, msg: String) -> Error {
        match line {
            0 => Error::Config(format!("{key}: {msg}")),
            _ => Error::Parse {
                path: self.name.clone(),
                line,
                msg: format!("{key}: {msg}"),
            },
        }
    }

    /// Overwrites every field of `target` named by a key, consuming those
    /// keys. Values are parsed according to the field's current type.
    pub fn apply<T: Serialize + DeserializeOwned>(&mut self, target: &mut T) -> Result<()> {
        let mut v = serde_json::to_value(&*target)?;
        let obj = v
            .as_object_mut()
            .ok_or_else(|| Error::Config("configuration target is not a struct".into()))?;
        let mut touched = Vec::new();
        for (key, field) in obj.iter_mut() {
            if let Some(e) = self.entries.remove(key) {
                *field = convert(&e.value, field).map_err(|msg| self.error(key, e.line, msg))?;
                touched.push((key.clone(), e.line));
            }
        }
        *target = serde_json::from_value(v).map_err(|err| {
            let (key, line) = touched.first().cloned().unwrap_or_default();
            self.error(&key, line, err.to_string())
        })?;
        Ok(())
    }

    /// Errors if any key was never consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.iter().next() {
            None => Ok(()),
            Some((k, e)) => {
                let all: Vec<&str> = self.entries.keys().map(String::as_str).collect();
                Err(self.error(k, e.line, format!("unknown key(s): {}", all.join(", "))))
            }
        }
    }
}

fn convert(raw: &str, current: &Value) -> std::result::Result<Value, String> {
    match current {
        Value::Bool(_) => raw
            .parse::<bool>()
            .map(Value::Bool)
            .map_err(|_| format!("expected true or false, got `{raw}`")),
        Value::Number(n) if n.is_u64() => raw
            .parse::<u64>()
            .map(Value::from)
            .map_err(|_| format!("expected a non-negative integer, got `{raw}`")),
        Value::Number(_) => raw
            .parse::<f64>()
            .ok()
            .and_then(serde_json::Number::from_f64)
            .map(Value::Number)
            .ok_or_else(|| format!("expected a finite number, got `{raw}`")),
        Value::String(_) => Ok(Value::String(raw.to_string())),
        other => Err(format!("cannot set a field of type {other}")),
    }
}
