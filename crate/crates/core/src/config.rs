//! Flat `key = value` configuration files.
//!
//! Keys are long flag names without the leading dashes. Blank lines and
//! lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: key {key:?} given twice")]
    DuplicateKey { line: usize, key: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn parse(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: i + 1,
                text: raw.into(),
            });
        };
        let key = k.trim().trim_start_matches("--").to_string();
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line: i + 1,
                text: raw.into(),
            });
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(ConfigError::DuplicateKey { line: i + 1, key });
        }
    }
    Ok(out)
}

pub fn load(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>, ConfigError> {
    parse(&std::fs::read_to_string(path)?)
}
