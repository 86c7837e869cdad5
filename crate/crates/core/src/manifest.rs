//! Run manifests: a plain `key = value` text file written next to the outputs
//! of every artifact-producing command.

use crate::error::{Error, Result};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub subcommand: String,
    /// Full command line, so the run can be repeated.
    pub args: Vec<String>,
    pub seeds: Vec<(String, u64)>,
    /// Short hashes of the configurations in play (render, net, model, scenario...).
    pub config_hashes: Vec<(String, String)>,
    /// Free-form settings worth recording (worker count, profile, ...).
    pub settings: Vec<(String, String)>,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Hex SHA-256 prefix of any serialisable config, via its TOML form.
pub fn config_hash<T: serde::Serialize>(value: &T) -> String {
    let text = toml::to_string(value).unwrap_or_else(|_| String::new());
    Sha256::digest(text.as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn start(subcommand: &str, args: Vec<String>) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            args,
            seeds: Vec::new(),
            config_hashes: Vec::new(),
            settings: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: now(),
            finished_unix: None,
        }
    }

    pub fn seed(&mut self, name: &str, v: u64) -> &mut Self {
        self.seeds.push((name.into(), v));
        self
    }

    pub fn hash<T: serde::Serialize>(&mut self, name: &str, value: &T) -> &mut Self {
        self.config_hashes.push((name.into(), config_hash(value)));
        self
    }

    pub fn setting(&mut self, name: &str, v: impl ToString) -> &mut Self {
        self.settings.push((name.into(), v.to_string()));
        self
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "subcommand = {}", self.subcommand);
        let _ = writeln!(out, "args = {}", self.args.join(" "));
        let _ = writeln!(out, "version = {}", self.version);
        for (k, v) in &self.seeds {
            let _ = writeln!(out, "seed.{k} = {v}");
        }
        for (k, v) in &self.config_hashes {
            let _ = writeln!(out, "hash.{k} = {v}");
        }
        for (k, v) in &self.settings {
            let _ = writeln!(out, "setting.{k} = {v}");
        }
        let _ = writeln!(out, "started = {}", self.started_unix);
        if let Some(f) = self.finished_unix {
            let _ = writeln!(out, "finished = {f}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut m = RunManifest::start("", Vec::new());
        m.version.clear();
        let mut have_sub = false;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(" = ")
                .or_else(|| line.strip_suffix(" =").map(|k| (k, "")))
                .ok_or_else(|| Error::Format(format!("bad manifest line {line:?}")))?;
            let num = |v: &str| v.parse::<u64>().map_err(|_| Error::Format(format!("bad number in {line:?}")));
            match k {
                "subcommand" => {
                    m.subcommand = v.into();
                    have_sub = true;
                }
                "args" => m.args = v.split_whitespace().map(String::from).collect(),
                "version" => m.version = v.into(),
                "started" => m.started_unix = num(v)?,
                "finished" => m.finished_unix = Some(num(v)?),
                _ => {
                    if let Some(s) = k.strip_prefix("seed.") {
                        m.seeds.push((s.into(), num(v)?));
                    } else if let Some(s) = k.strip_prefix("hash.") {
                        m.config_hashes.push((s.into(), v.into()));
                    } else if let Some(s) = k.strip_prefix("setting.") {
                        m.settings.push((s.into(), v.into()));
                    } else {
                        return Err(Error::Format(format!("unknown manifest key {k:?}")));
                    }
                }
            }
        }
        if !have_sub {
            return Err(Error::Format("manifest without subcommand".into()));
        }
        Ok(m)
    }

    /// Stamp the finish time and write `manifest.txt` into `dir`.
    pub fn finish(&mut self, dir: &Path) -> Result<()> {
        self.finished_unix = Some(now());
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(MANIFEST_NAME), self.to_text())?;
        Ok(())
    }
}
