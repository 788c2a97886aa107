//! Plain `key = value` configuration files. `#` starts a comment; blank
//! lines are ignored; `key: value` is accepted as well.

use std::collections::BTreeMap;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: duplicate key {key:?}")]
    Duplicate { line: usize, key: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("key {key:?}: cannot parse {value:?}")]
    BadValue { key: String, value: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    pub entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| ConfigError::Syntax {
                    line: i + 1,
                    text: raw.to_string(),
                })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    text: raw.to_string(),
                });
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(ConfigError::Duplicate {
                    line: i + 1,
                    key: k.to_string(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        self.entries
            .get(key)
            .map(|v| {
                v.parse().map_err(|_| ConfigError::BadValue {
                    key: key.to_string(),
                    value: v.clone(),
                })
            })
            .transpose()
    }

    /// Rejects keys outside `known`.
    pub fn only(&self, known: &[&str]) -> Result<(), ConfigError> {
        match self.entries.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(ConfigError::UnknownKey(k.clone())),
            None => Ok(()),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_errors() {
        let kv = KeyValues::parse("# comment\ntarget_frames = 16\nsampling: even  # trailing\n\n").unwrap();
        assert_eq!(kv.get::<usize>("target_frames").unwrap(), Some(16));
        assert_eq!(kv.get::<String>("sampling").unwrap().as_deref(), Some("even"));
        assert_eq!(kv.get::<usize>("missing").unwrap(), None);
        assert!(matches!(kv.get::<usize>("sampling"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(KeyValues::parse("a = 1\nnonsense"), Err(ConfigError::Syntax { line: 2, .. })));
        assert!(matches!(KeyValues::parse("a = 1\na = 2"), Err(ConfigError::Duplicate { line: 2, .. })));
        assert!(kv.only(&["target_frames"]).is_err());
        assert_eq!(KeyValues::parse(&kv.to_text()).unwrap(), kv);
    }
}
