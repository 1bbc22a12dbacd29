//! Option resolution: flags, then environment (both handled by clap), then
//! the `--config` file, then built-in defaults.
//!
//! The file is `key = value` lines with `#` comments. It may hold run options
//! for any subcommand as well as adapter-training keys.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use cir_core::{CirError, Result};

/// Run-option keys understood outside the trainer.
pub const RUN_KEYS: &[&str] = &[
    "protocol",
    "alpha",
    "alphas",
    "k",
    "ks",
    "subset_ks",
    "shards",
    "caption_mode",
    "exclude_reference",
    "seed",
];

#[derive(Debug, Default)]
pub struct FileConfig {
    entries: BTreeMap<String, (usize, String)>,
}

fn bad(msg: String) -> CirError {
    CirError::BadConfig(msg)
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::Error::new(e).context(format!("reading config {}", path.display())))?;
        Ok(Self::parse(&text)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("config line {line_no}: expected `key = value`")))?;
            let key = key.trim().to_string();
            let known = RUN_KEYS.contains(&key.as_str())
                || cir_core::tat::config::KEYS.contains(&key.as_str())
                || matches!(key.as_str(), "lr" | "dropout_p");
            if !known {
                return Err(bad(format!("config line {line_no}: unknown key `{key}`")));
            }
            if entries
                .insert(key.clone(), (line_no, value.trim().to_string()))
                .is_some()
            {
                return Err(bad(format!("config line {line_no}: `{key}` set twice")));
            }
        }
        Ok(Self { entries })
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.entries
            .get(key)
            .map(|(line, v)| {
                v.parse()
                    .map_err(|e| bad(format!("config line {line}: `{key} = {v}`: {e}")))
            })
            .transpose()
    }

    /// A comma-separated list value.
    pub fn list<T>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.entries
            .get(key)
            .map(|(line, v)| {
                v.split(',')
                    .map(|s| {
                        s.trim()
                            .parse()
                            .map_err(|e| bad(format!("config line {line}: `{key} = {v}`: {e}")))
                    })
                    .collect()
            })
            .transpose()
    }

    /// Trainer keys in file order, excluding `seed`, which is resolved
    /// separately.
    pub fn training_entries(&self) -> Vec<(&str, &str)> {
        let mut out: Vec<(usize, &str, &str)> = self
            .entries
            .iter()
            .filter(|(k, _)| !RUN_KEYS.contains(&k.as_str()))
            .map(|(k, (line, v))| (*line, k.as_str(), v.as_str()))
            .collect();
        out.sort_by_key(|e| e.0);
        out.into_iter().map(|(_, k, v)| (k, v)).collect()
    }
}

/// `flag` if given, else the file value, else `default`.
pub fn resolve<T>(flag: Option<T>, file: &FileConfig, key: &str, default: T) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    match flag {
        Some(v) => Ok(v),
        None => Ok(file.get(key)?.unwrap_or(default)),
    }
}

/// Like [`resolve`] for list options; an empty flag list counts as unset.
pub fn resolve_list<T>(flag: Vec<T>, file: &FileConfig, key: &str) -> Result<Option<Vec<T>>>
where
    T: FromStr,
    T::Err: Display,
{
    if !flag.is_empty() {
        return Ok(Some(flag));
    }
    file.list(key)
}
