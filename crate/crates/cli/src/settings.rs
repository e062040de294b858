//! Config-file merging, output files and exit codes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use sparse_mobius::peeling::json_digest;
use sparse_mobius::Error;

/// Why a command stopped. Each kind has its own exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Oracle(String),
    /// Outputs were written but the run did not finish.
    Incomplete(String),
    Other(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Oracle(_) => 3,
            Failure::Incomplete(_) => 4,
        })
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Oracle(m) => write!(f, "oracle failure: {m}"),
            Failure::Incomplete(m) => write!(f, "run incomplete: {m}"),
            Failure::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Oracle(_) => Failure::Oracle(e.to_string()),
            Error::DimensionMismatch { .. }
            | Error::DimensionTooLarge { .. }
            | Error::InvalidConfig(_)
            | Error::Infeasible(_)
            | Error::Parse(_) => Failure::Config(e.to_string()),
            other => Failure::Other(other.into()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Other(e.into())
    }
}

pub type CliResult<T> = Result<T, Failure>;

pub fn config_error<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Config(msg.into()))
}

/// Loads `--config`. A manifest written by an earlier run is accepted too:
/// its `config` object is used, provided the command matches.
pub fn load_config(path: Option<&Path>, command: &str) -> CliResult<Map<String, Value>> {
    let Some(path) = path else {
        return Ok(Map::new());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{} is not valid JSON: {e}", path.display())))?;
    let Value::Object(mut map) = value else {
        return config_error(format!("{} must hold a JSON object", path.display()));
    };
    if let Some(Value::Object(inner)) = map.remove("config") {
        if let Some(Value::String(cmd)) = map.get("command") {
            if cmd != command {
                return config_error(format!("manifest {} is for `{cmd}`, not `{command}`", path.display()));
            }
        }
        return Ok(inner);
    }
    Ok(map)
}

/// Overlays the flags that were given on top of the config file and reads
/// the result back into the flag struct.
pub fn merge<T: Serialize + DeserializeOwned>(mut file: Map<String, Value>, flags: &T) -> CliResult<T> {
    if let Value::Object(given) = serde_json::to_value(flags)? {
        for (k, v) in given {
            if !v.is_null() {
                file.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(file)).map_err(|e| Failure::Config(format!("bad config value: {e}")))
}

/// Flag, then config file, then `SMT_SEED`, then 0.
pub fn resolve_seed(seed: Option<u64>) -> CliResult<u64> {
    if let Some(s) = seed {
        return Ok(s);
    }
    match std::env::var("SMT_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| Failure::Config(format!("SMT_SEED = {v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

pub fn required<T: Clone>(value: &Option<T>, name: &str) -> CliResult<T> {
    value.clone().ok_or_else(|| Failure::Config(format!("missing --{}", name.replace('_', "-"))))
}

/// Collects the files a command writes and the manifest describing it.
pub struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn create(&mut self, name: &str) -> CliResult<BufWriter<File>> {
        let path = self.dir.join(name);
        self.written.push(name.to_owned());
        Ok(BufWriter::new(File::create(&path)?))
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    /// `manifest.json`: the resolved config replays the run when passed back
    /// through `--config`.
    pub fn finish<T: Serialize>(mut self, command: &str, config: &T, extra: Value) -> CliResult<()> {
        let mut manifest = Map::new();
        manifest.insert("tool".into(), "smt".into());
        manifest.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        manifest.insert("command".into(), command.into());
        manifest.insert("config".into(), serde_json::to_value(config)?);
        manifest.insert("config_digest".into(), json_digest(config).into());
        manifest.insert("outputs".into(), serde_json::to_value(&self.written)?);
        manifest.insert("argv".into(), serde_json::to_value(std::env::args().collect::<Vec<_>>())?);
        if let Value::Object(extra) = extra {
            manifest.extend(extra);
        }
        self.write_json("manifest.json", &manifest)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}
