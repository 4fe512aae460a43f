//! Line-oriented `key=value` configuration.
//!
//! `#` starts a comment, blank lines are ignored, and nesting is flattened
//! into dotted keys (`train.lr=0.05`). Overrides given as `key=value`
//! strings replace file values. Consumers declare the keys they accept and
//! anything else is rejected by name.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::report::KeyValues;

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    value: String,
    origin: String,
    line: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, Entry>,
}

impl Config {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Config::new();
        for (n, raw) in text.lines().enumerate() {
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: origin.to_string(),
                line: n + 1,
                message,
            };
            let (k, v) = body.split_once('=').ok_or_else(|| err(format!("expected key=value, got `{body}`")))?;
            let key = k.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(err(format!("bad key `{key}`")));
            }
            if let Some(prev) = cfg.entries.get(key) {
                return Err(err(format!("duplicate key `{key}` (first set on line {})", prev.line)));
            }
            cfg.entries.insert(
                key.to_string(),
                Entry {
                    value: v.trim().to_string(),
                    origin: origin.to_string(),
                    line: n + 1,
                },
            );
        }
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text, &path.display().to_string())
    }

    /// Applies one `key=value` override.
    pub fn set_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| Error::Parse {
            path: "override".into(),
            line: 1,
            message: format!("expected key=value, got `{assignment}`"),
        })?;
        self.set(k.trim(), v.trim());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                origin: "override".into(),
                line: 1,
            },
        );
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Parses `key` if present; a bad value names its file and line.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let Some(e) = self.entries.get(key) else {
            return Ok(None);
        };
        e.value.parse().map(Some).map_err(|err: T::Err| Error::Parse {
            path: e.origin.clone(),
            line: e.line,
            message: format!("`{key}`: cannot parse `{}`: {err}", e.value),
        })
    }

    /// Overwrites `target` when `key` is present.
    pub fn update<T: FromStr>(&self, key: &str, target: &mut T) -> Result<()>
    where
        T::Err: Display,
    {
        if let Some(v) = self.get(key)? {
            *target = v;
        }
        Ok(())
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        let Some(e) = self.entries.get(key) else {
            return Ok(None);
        };
        e.value
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|err: T::Err| Error::Parse {
                    path: e.origin.clone(),
                    line: e.line,
                    message: format!("`{key}`: cannot parse `{s}`: {err}"),
                })
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Keys under `prefix.`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> Config {
        let p = format!("{prefix}.");
        Config {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, e)| k.strip_prefix(&p).map(|rest| (rest.to_string(), e.clone())))
                .collect(),
        }
    }

    /// Fails on the first key not accepted by `known`.
    pub fn reject_unknown(&self, known: impl Fn(&str) -> bool) -> Result<()> {
        match self.entries.keys().find(|k| !known(k)) {
            Some(k) => Err(Error::UnknownKey(k.clone())),
            None => Ok(()),
        }
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        for (k, e) in &self.entries {
            kv.push(k.clone(), &e.value);
        }
        kv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_dotted_keys() {
        let cfg = Config::parse("# run\ntrain.lr = 0.05 # step\n\nseed=3\ntrain.schedule=20:10, 26:10\n", "c.cfg").unwrap();
        assert_eq!(cfg.get::<f64>("train.lr").unwrap(), Some(0.05));
        assert_eq!(cfg.get::<u64>("seed").unwrap(), Some(3));
        assert_eq!(cfg.get::<u64>("missing").unwrap(), None);
        let train = cfg.section("train");
        assert_eq!(train.get_list::<String>("schedule").unwrap().unwrap(), ["20:10", "26:10"]);
        assert!(train.contains("lr") && !train.contains("seed"));
    }

    #[test]
    fn overrides_win() {
        let mut cfg = Config::parse("seed=3\n", "c.cfg").unwrap();
        cfg.set_override("seed=9").unwrap();
        assert_eq!(cfg.get::<u64>("seed").unwrap(), Some(9));
        assert!(cfg.set_override("seed").is_err());
    }

    #[test]
    fn errors_name_file_line_and_key() {
        let err = Config::parse("a=1\nb\n", "c.cfg").unwrap_err();
        assert_eq!(err.to_string(), "c.cfg:2: expected key=value, got `b`");
        let err = Config::parse("a=1\na=2\n", "c.cfg").unwrap_err();
        assert_eq!(err.to_string(), "c.cfg:2: duplicate key `a` (first set on line 1)");
        let cfg = Config::parse("x=1\nlr=fast\n", "c.cfg").unwrap();
        assert_eq!(
            cfg.get::<f64>("lr").unwrap_err().to_string(),
            "c.cfg:2: `lr`: cannot parse `fast`: invalid float literal"
        );
        let err = cfg.reject_unknown(|k| k == "lr").unwrap_err();
        assert_eq!(err.to_string(), "unknown config key `x`");
    }
}
