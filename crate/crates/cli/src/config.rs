//! Optional TOML configuration. Keys mirror the command-line flags; a
//! `[provider]` table holds the live endpoint settings.
//!
//! Precedence, highest first: flag, environment variable, config file,
//! built-in default.

use std::path::{Path, PathBuf};

use curate_core::ProviderConfig;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub addr: Option<String>,
    pub sessions_dir: Option<PathBuf>,
    pub mode: Option<String>,
    pub strategy: Option<String>,
    pub provider_config: Option<PathBuf>,
    pub mock_script: Option<PathBuf>,
    pub provider: Option<ProviderTable>,
}

/// Same fields as [`ProviderConfig`]. An `api_key` entry is rejected by
/// `deny_unknown_fields`; keys are read from the environment only.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderTable {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub timeout_secs: Option<u64>,
    pub retry_backoff_ms: Option<u64>,
}

impl ProviderTable {
    pub fn apply(self, mut base: ProviderConfig) -> ProviderConfig {
        if let Some(v) = self.endpoint {
            base.endpoint = v;
        }
        if let Some(v) = self.model {
            base.model = v;
        }
        if let Some(v) = self.api_key_env {
            base.api_key_env = v;
        }
        if let Some(v) = self.timeout_secs {
            base.timeout_secs = v;
        }
        if let Some(v) = self.retry_backoff_ms {
            base.retry_backoff_ms = v;
        }
        base
    }
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::BadConfig(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| {
        let hint = if e.message().contains("unknown field `api_key`") {
            " (API keys are read from the environment; name the variable with `api_key_env`)"
        } else {
            ""
        };
        CliError::BadConfig(format!("{}: {}{hint}", path.display(), e.message()))
    })
}

pub fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    path.map(read_toml).transpose().map(Option::unwrap_or_default)
}

/// Provider settings from an optional provider file, then the environment.
pub fn provider_config(path: Option<&Path>, inline: Option<ProviderTable>) -> Result<ProviderConfig, CliError> {
    let mut config = ProviderConfig::default();
    if let Some(table) = inline {
        config = table.apply(config);
    }
    if let Some(path) = path {
        config = read_toml::<ProviderTable>(path)?.apply(config);
    }
    Ok(config.with_env())
}
