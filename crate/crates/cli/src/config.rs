//! Flat `key = value` run configuration.
//!
//! Each subcommand declares its keys with defaults. Values are resolved
//! from command-line flags, then the config file, then the default; a key
//! without a default must be given somewhere.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::CliError;

/// One documented key of a subcommand.
pub struct Key {
    pub name: &'static str,
    /// `None` marks a required key.
    pub default: Option<&'static str>,
    pub help: &'static str,
}

pub const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default: Some(default), help }
}

pub const fn required(name: &'static str, help: &'static str) -> Key {
    Key { name, default: None, help }
}

/// Keys shared by every subcommand.
pub const GLOBAL_KEYS: &[Key] = &[
    key("seed", "0", "base RNG seed"),
    key("out_dir", "out", "output directory"),
    key("threads", "0", "worker threads, 0 for all cores (falls back to SLOPPY_LAB_THREADS)"),
];

pub const THREADS_ENV: &str = "SLOPPY_LAB_THREADS";

/// Parses `key = value` lines. `#` starts a comment; blank lines are
/// ignored.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value, got {raw:?}", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", i + 1)));
        }
        map.insert(k.to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Resolved configuration of one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    command: String,
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Merges `flags` over `file` over the declared defaults, rejecting
    /// unknown and missing keys. `env_threads` is used when neither the
    /// flags nor the file set `threads`.
    pub fn resolve(
        command: &str,
        keys: &[Key],
        file: &BTreeMap<String, String>,
        flags: &BTreeMap<String, String>,
        env_threads: Option<String>,
    ) -> Result<Self, CliError> {
        let all: Vec<&Key> = GLOBAL_KEYS.iter().chain(keys).collect();
        for k in file.keys().chain(flags.keys()) {
            if !all.iter().any(|d| d.name == k) {
                let known: Vec<&str> = all.iter().map(|d| d.name).collect();
                return Err(CliError::Usage(format!(
                    "unknown key {k:?} for {command}; known keys: {}",
                    known.join(", ")
                )));
            }
        }
        let mut values = BTreeMap::new();
        for d in all {
            let v = flags
                .get(d.name)
                .or_else(|| file.get(d.name))
                .cloned()
                .or_else(|| if d.name == "threads" { env_threads.clone() } else { None })
                .or_else(|| d.default.map(str::to_string));
            match v {
                Some(v) => {
                    values.insert(d.name.to_string(), v);
                }
                None => return Err(CliError::Usage(format!("{command} needs {} ({})", d.name, d.help))),
            }
        }
        Ok(RunConfig { command: command.to_string(), values })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn str(&self, k: &str) -> &str {
        self.values.get(k).map(String::as_str).unwrap_or_else(|| panic!("undeclared key {k}"))
    }

    pub fn parse<T: FromStr>(&self, k: &str) -> Result<T, CliError> {
        let v = self.str(k);
        v.parse().map_err(|_| CliError::Usage(format!("bad value {v:?} for {k}")))
    }

    pub fn flag(&self, k: &str) -> Result<bool, CliError> {
        match self.str(k) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(CliError::Usage(format!("bad value {v:?} for {k}; expected true or false"))),
        }
    }

    /// Comma-separated list; an empty value is an empty list.
    pub fn list<T: FromStr>(&self, k: &str) -> Result<Vec<T>, CliError> {
        let v = self.str(k);
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| CliError::Usage(format!("bad list entry {s:?} for {k}"))))
            .collect()
    }

    /// Path value, or `None` when empty.
    pub fn path(&self, k: &str) -> Option<PathBuf> {
        let v = self.str(k);
        if v.is_empty() {
            None
        } else {
            Some(PathBuf::from(v))
        }
    }

    pub fn required_path(&self, k: &str) -> Result<PathBuf, CliError> {
        self.path(k).ok_or_else(|| CliError::Usage(format!("{} needs a path for {k}", self.command)))
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.parse("seed")
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.str("out_dir"))
    }

    /// Snapshot text, one sorted `key = value` line per key.
    pub fn snapshot(&self) -> String {
        let mut s = format!("# sloppy-lab {} resolved config\n", self.command);
        for (k, v) in &self.values {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }

    /// SHA-256 in hex over the keys that affect results, so `out_dir` and
    /// `threads` are left out.
    pub fn hash(&self) -> String {
        let mut s = self.command.clone();
        for (k, v) in &self.values {
            if k != "out_dir" && k != "threads" {
                write!(s, "\n{k} = {v}").unwrap();
            }
        }
        Sha256::digest(s.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Writes `<command>.config.txt` into `dir`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(format!("{}.config.txt", self.command));
        std::fs::write(&path, self.snapshot()).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

/// Listing of the keys of a subcommand for `--help` text.
pub fn describe(keys: &[Key]) -> String {
    let mut s = String::from("config keys:\n");
    for k in GLOBAL_KEYS.iter().chain(keys) {
        let d = k.default.map_or("required".to_string(), |d| format!("default {d:?}"));
        writeln!(s, "  {:<18} {} ({d})", k.name, k.help).unwrap();
    }
    s
}
