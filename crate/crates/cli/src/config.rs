//! Plain-text `key = value` settings merged with command-line flags.
//!
//! Keys are the long flag names without the leading dashes. Blank lines and
//! lines starting with `#` are ignored. A flag given on the command line
//! always wins over the file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
    notes: Vec<String>,
    consumed: BTreeSet<String>,
}

pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", idx + 1)))?;
        let key = key.trim().trim_start_matches("--").to_string();
        if key.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", idx + 1)));
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(CliError::Usage(format!(
                "config line {}: duplicate key {key:?}",
                idx + 1
            )));
        }
    }
    Ok(out)
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Self {
            file,
            ..Self::default()
        })
    }

    fn file_value<T>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.consumed.insert(key.to_string());
        match self.file.get(key) {
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("config key {key}: invalid value {raw:?}: {e}"))),
            None => Ok(None),
        }
    }

    /// Flag, else config file, else `default`.
    pub fn value<T>(&mut self, key: &str, flag: Option<T>, default: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let file = self.file_value(key)?;
        let v = flag.or(file).or(default);
        if let Some(v) = &v {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    pub fn required<T>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.value(key, flag, None)?
            .ok_or_else(|| CliError::Usage(format!("missing required setting --{key}")))
    }

    pub fn or_default<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        Ok(self.value(key, flag, Some(default))?.expect("default given"))
    }

    /// A switch is on when given as a flag or set to `true` in the file.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool, CliError> {
        let on = flag || self.file_value::<bool>(key)?.unwrap_or(false);
        self.resolved.insert(key.to_string(), on.to_string());
        Ok(on)
    }

    /// Repeatable flag; the file form is a comma-separated list.
    pub fn list<T>(&mut self, key: &str, flag: Vec<T>, default: Vec<T>) -> Result<Vec<T>, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.consumed.insert(key.to_string());
        let values = if !flag.is_empty() {
            flag
        } else if let Some(raw) = self.file.get(key) {
            raw.split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|e| CliError::Usage(format!("config key {key}: invalid value {p:?}: {e}")))
                })
                .collect::<Result<Vec<T>, _>>()?
        } else {
            default
        };
        let joined: Vec<String> = values.iter().map(ToString::to_string).collect();
        self.resolved.insert(key.to_string(), joined.join(","));
        Ok(values)
    }

    pub fn note(&mut self, line: impl Into<String>) {
        self.notes.push(line.into());
    }

    /// Config-file keys that no setting of this command read.
    pub fn unused_keys(&self) -> Vec<&str> {
        self.file
            .keys()
            .filter(|k| !self.consumed.contains(*k))
            .map(String::as_str)
            .collect()
    }

    /// The resolved settings in the same `key = value` form the loader reads.
    pub fn manifest(&self, command: &str) -> String {
        let mut out = format!("# ssmf {command}\n");
        for n in &self.notes {
            out.push_str(&format!("# {n}\n"));
        }
        for (k, v) in &self.resolved {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_dashes() {
        let map = parse_config("# c\n\neta = 0.2\n--k=3\n").unwrap();
        assert_eq!(map["eta"], "0.2");
        assert_eq!(map["k"], "3");
        assert!(parse_config("oops").is_err());
        assert!(parse_config("a=1\na=2").is_err());
    }

    #[test]
    fn flags_win_over_file() {
        let mut s = Settings {
            file: parse_config("eta = 0.2\nk = 4").unwrap(),
            ..Settings::default()
        };
        assert_eq!(s.or_default("eta", Some(0.3), 0.1).unwrap(), 0.3);
        assert_eq!(s.or_default::<usize>("k", None, 15).unwrap(), 4);
        assert_eq!(s.or_default::<usize>("season", None, 7).unwrap(), 7);
        assert!(s.required::<String>("time-col", None).is_err());
        let m = s.manifest("run");
        assert!(m.contains("eta = 0.3\n") && m.contains("k = 4\n"));
    }

    #[test]
    fn bad_file_value_is_usage_error() {
        let mut s = Settings {
            file: parse_config("k = many").unwrap(),
            ..Settings::default()
        };
        assert!(matches!(s.or_default::<usize>("k", None, 1), Err(CliError::Usage(_))));
    }
}
