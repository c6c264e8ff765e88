//! Parameter resolution: command-line flag, then config file, then default.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::Failure;

/// Resolves settings and records every resolved value for the manifest.
pub struct Settings {
    file: BTreeMap<String, String>,
    source: Option<PathBuf>,
    queried: BTreeSet<String>,
    resolved: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(config: Option<&Path>) -> Result<Self, Failure> {
        let (file, source) = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::Validation(format!("cannot read config {}: {e}", p.display())))?;
                let map = mrwlab::mrw::parse_key_value(&text)
                    .map_err(|e| Failure::Validation(format!("config {}: {e}", p.display())))?;
                (map, Some(p.to_path_buf()))
            }
            None => (BTreeMap::new(), None),
        };
        Ok(Self {
            file,
            source,
            queried: BTreeSet::new(),
            resolved: BTreeMap::new(),
        })
    }

    #[cfg(test)]
    pub fn from_pairs(pairs: &[(&str, &str)]) -> Self {
        Self {
            file: pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            source: None,
            queried: BTreeSet::new(),
            resolved: BTreeMap::new(),
        }
    }

    fn lookup<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, Failure>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.queried.insert(key.to_string());
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                Failure::Validation(format!("config key `{key}` = {raw:?}: {e}"))
            }),
            None => Ok(None),
        }
    }

    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, Failure>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self.lookup(key, flag)?.unwrap_or(default);
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, Failure>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self.lookup(key, flag)?;
        if let Some(v) = &v {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    pub fn required<T>(&mut self, key: &str, flag: Option<T>) -> Result<T, Failure>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.optional(key, flag)?
            .ok_or_else(|| Failure::Validation(format!("missing required setting `{key}`")))
    }

    /// A setting kept out of the manifest, such as the output directory.
    pub fn unrecorded(&mut self, key: &str, flag: Option<String>) -> Result<Option<String>, Failure> {
        self.lookup(key, flag)
    }

    /// An input file that must exist.
    pub fn input(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf, Failure> {
        let p: PathBuf = self
            .lookup(key, flag.map(|p| p.display().to_string()))?
            .map(PathBuf::from)
            .ok_or_else(|| Failure::Validation(format!("missing required input `{key}`")))?;
        if !p.is_file() {
            return Err(Failure::Validation(format!("{key}: no such file {}", p.display())));
        }
        self.resolved.insert(key.to_string(), p.display().to_string());
        Ok(p)
    }

    pub fn optional_input(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>, Failure> {
        if flag.is_none() && !self.file.contains_key(key) {
            self.queried.insert(key.to_string());
            return Ok(None);
        }
        self.input(key, flag).map(Some)
    }

    /// Records a derived value that is not a user setting.
    pub fn record(&mut self, key: &str, value: impl Display) {
        self.resolved.insert(key.to_string(), value.to_string());
    }

    /// Config-file keys that the command never asked for.
    pub fn finish(&self) -> Result<(), Failure> {
        let unknown: Vec<&str> = self
            .file
            .keys()
            .filter(|k| !self.queried.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Failure::Validation(format!("unknown config keys: {}", unknown.join(", "))))
        }
    }

    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.resolved
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }
}

/// Comma-separated list of numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct NumberList(pub Vec<f64>);

impl FromStr for NumberList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(NumberList)
    }
}

impl Display for NumberList {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

/// Comma-separated list of paths.
#[derive(Debug, Clone, PartialEq)]
pub struct PathList(pub Vec<PathBuf>);

impl FromStr for PathList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v: Vec<PathBuf> = s.split(',').map(|p| PathBuf::from(p.trim())).filter(|p| !p.as_os_str().is_empty()).collect();
        if v.is_empty() {
            return Err("empty path list".into());
        }
        Ok(PathList(v))
    }
}

impl Display for PathList {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|p| p.display().to_string()).collect();
        f.write_str(&parts.join(","))
    }
}
