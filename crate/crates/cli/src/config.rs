//! Plain-text `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Parsed config file. Keys are the long flag names without the leading
/// `--`, e.g. `unit-cost = 1e-9`; underscores are accepted for dashes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|msg| CliError::Config(format!("{}: {msg}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut entries = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", no + 1))?;
            let key = key.trim().replace('_', "-");
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(format!("line {}: duplicate key `{key}`", no + 1));
            }
        }
        Ok(Self { entries })
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.entries
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::Config(format!("config key `{key}`: {e}")))
            })
            .transpose()
    }

    /// Comma-separated list value.
    pub fn get_list<T>(&self, key: &str) -> Result<Option<Vec<T>>, CliError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.entries
            .get(key)
            .map(|v| {
                v.split(',')
                    .map(|item| {
                        item.trim()
                            .parse::<T>()
                            .map_err(|e| CliError::Config(format!("config key `{key}`: {e}")))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_lists() {
        let cfg = ConfigFile::parse("# run\nn = 2048\nwidths = 8, 16 # inline\n\nunit_cost=1e-9\n").unwrap();
        assert_eq!(cfg.get::<usize>("n").unwrap(), Some(2048));
        assert_eq!(cfg.get_list::<usize>("widths").unwrap(), Some(vec![8, 16]));
        assert_eq!(cfg.get::<f64>("unit-cost").unwrap(), Some(1e-9));
        assert_eq!(cfg.get::<usize>("w").unwrap(), None);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(ConfigFile::parse("n 2048").is_err());
        assert!(ConfigFile::parse("n = 1\nn = 2").is_err());
        let cfg = ConfigFile::parse("n = many").unwrap();
        assert!(cfg.get::<usize>("n").is_err());
    }
}
