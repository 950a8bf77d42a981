//! Optional TOML defaults. Precedence: flags, then this file, then
//! `IDEC_BACKEND` (backend only), then built-in defaults.

use std::path::Path;

use serde::Deserialize;

use crate::{CliError, CliResult};

pub const BACKEND_ENV: &str = "IDEC_BACKEND";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub backend: Option<String>,
    pub template: Option<String>,
    pub method: Option<String>,
    pub k: Option<usize>,
    pub strategy: Option<String>,
    pub seed: Option<u64>,
    pub max_new_tokens: Option<usize>,
    pub support: Option<String>,
    pub jobs: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn backend(&self, flag: Option<&str>) -> CliResult<String> {
        flag.map(str::to_string)
            .or_else(|| self.backend.clone())
            .or_else(|| std::env::var(BACKEND_ENV).ok().filter(|s| !s.is_empty()))
            .ok_or_else(|| CliError::Usage(format!("no backend: pass --backend or set {BACKEND_ENV}")))
    }
}

/// `flag`, else the file value, else `default`; file strings are parsed
/// with the flag's parser.
pub fn pick<T>(flag: Option<T>, file: Option<&str>, default: T) -> CliResult<T>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    if let Some(v) = flag {
        return Ok(v);
    }
    match file {
        Some(s) => s
            .parse()
            .map_err(|e| CliError::Usage(format!("config value {s:?}: {e}"))),
        None => Ok(default),
    }
}
