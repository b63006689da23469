//! Config-file loading, flag merging and run manifests.

use crate::CliError;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

/// Keys set on the command line win over keys from the file.
pub trait Merge {
    fn merge(self, base: Self) -> Self;
}

/// Implements [`Merge`] field by field with `Option::or`.
macro_rules! merge_fields {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::config::Merge for $ty {
            fn merge(self, base: Self) -> Self {
                Self { $($field: self.$field.or(base.$field),)* }
            }
        }
    };
}
pub(crate) use merge_fields;

/// The manifest every command writes next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest<C> {
    pub command: String,
    pub config: C,
    pub version: String,
}

/// Reads a config file: either a bare object of command keys or any JSON
/// object whose `command` matches and whose `config` holds the keys, such as
/// a run manifest.
pub fn load<C: DeserializeOwned>(path: &Path, command: &str) -> Result<C, CliError> {
    let f = File::open(path).map_err(|e| {
        CliError::Lib(dpfmix::Error::Ingestion {
            row: None,
            msg: format!("cannot open config {}: {e}", path.display()),
        })
    })?;
    let value: Value = serde_json::from_reader(BufReader::new(f))
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let body = match value {
        Value::Object(mut map) if map.contains_key("command") => {
            if map.get("command").and_then(Value::as_str) != Some(command) {
                return Err(CliError::Config(format!(
                    "{} was not written by `{command}`",
                    path.display()
                )));
            }
            map.remove("config").ok_or_else(|| {
                CliError::Config(format!("{} has no config object", path.display()))
            })?
        }
        other => other,
    };
    serde_json::from_value(body).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Applies the optional config file under the flags.
pub fn resolve<C>(flags: C, file: Option<&PathBuf>, command: &str) -> Result<C, CliError>
where
    C: Merge + DeserializeOwned,
{
    match file {
        Some(path) => Ok(flags.merge(load(path, command)?)),
        None => Ok(flags),
    }
}

pub fn write_manifest<C: Serialize>(
    path: &Path,
    command: &str,
    config: &C,
) -> Result<(), CliError> {
    let run = RunManifest {
        command: command.to_string(),
        config,
        version: dpfmix::VERSION.to_string(),
    };
    let w = BufWriter::new(File::create(path).map_err(dpfmix::Error::from)?);
    serde_json::to_writer_pretty(w, &run).map_err(dpfmix::Error::from)?;
    Ok(())
}

/// `<path>.manifest.json` for commands whose output is a single file.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Unwraps a required key, naming its flag in the usage error.
pub fn required<T>(v: Option<T>, flag: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Usage(format!("missing required --{flag}")))
}
