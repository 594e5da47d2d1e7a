use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use condb_core::api::ApiPolicy;
use condb_core::store::StoreConfig;

/// Environment variable overriding `bind_address`.
pub const ENV_BIND_ADDRESS: &str = "CONDB_BIND_ADDRESS";
/// Environment variable overriding `store.database_path`.
pub const ENV_STORE_PATH: &str = "CONDB_STORE_PATH";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Service configuration file (TOML). Every key is optional.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind_address: String,
    pub store: StoreConfig,
    /// One JSON line per request when set.
    pub request_log_path: Option<PathBuf>,
    /// Requests handled concurrently; the rest wait in a FIFO queue.
    pub max_in_flight: usize,
    /// Waiting requests beyond this are refused with 503.
    pub queue_capacity: usize,
    pub read_only: bool,
    /// Accept the `strategy` query parameter on the resolution route.
    pub benchmark_mode: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind_address: "127.0.0.1:8080".into(),
            store: StoreConfig::default(),
            request_log_path: None,
            max_in_flight: 64,
            queue_capacity: 100_000,
            read_only: false,
            benchmark_mode: false,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml_str(raw: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(raw).map_err(|source| ConfigError::Parse {
            path: origin.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&raw, path)
    }

    /// Applies `CONDB_BIND_ADDRESS` / `CONDB_STORE_PATH` from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(v) = lookup(ENV_BIND_ADDRESS) {
            self.bind_address = v;
        }
        if let Some(v) = lookup(ENV_STORE_PATH) {
            self.store.database_path = v;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_in_flight == 0 {
            return Err(ConfigError::Invalid("max_in_flight must be positive".into()));
        }
        if self.store.database_path.is_empty() {
            return Err(ConfigError::Invalid("store.database_path must not be empty".into()));
        }
        Ok(())
    }

    pub fn policy(&self) -> ApiPolicy {
        ApiPolicy {
            read_only: self.read_only,
            benchmark_mode: self.benchmark_mode,
            default_strategy: if self.benchmark_mode {
                self.store.resolution_strategy
            } else {
                condb_core::ResolutionStrategy::OptimizedSingleQuery
            },
        }
    }
}
