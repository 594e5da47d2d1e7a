use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{ClientError, ClientResult};

pub const ENV_BASE_URL: &str = "CONDB_BASE_URL";
pub const ENV_READ_DIR: &str = "CONDB_READ_DIR";
/// Write prefixes separated like `PATH` entries.
pub const ENV_WRITE_DIRS: &str = "CONDB_WRITE_DIRS";

/// Client configuration file (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    pub base_url: String,
    /// Prefix prepended to payload URLs on reads.
    pub read_dir_prefix: PathBuf,
    /// Destinations for new payloads, tried in order.
    pub write_dir_prefixes: Vec<PathBuf>,
    /// Serve everything from an in-process fake database.
    pub use_fake_backend: bool,
    /// Seconds a resolution stays cached; 0 disables the cache.
    pub cache_ttl_secs: f64,
    pub request_timeout_secs: f64,
    /// Payload type name -> local file used instead of the database answer.
    pub override_map: BTreeMap<String, PathBuf>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8080".into(),
            read_dir_prefix: PathBuf::from("."),
            write_dir_prefixes: Vec::new(),
            use_fake_backend: false,
            cache_ttl_secs: 10.0,
            request_timeout_secs: 60.0,
            override_map: BTreeMap::new(),
        }
    }
}

impl ClientConfig {
    pub fn load(path: &Path) -> ClientResult<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| ClientError::io(format!("reading {}", path.display()), e))?;
        toml::from_str(&raw).map_err(|e| ClientError::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(v) = lookup(ENV_BASE_URL) {
            self.base_url = v;
        }
        if let Some(v) = lookup(ENV_READ_DIR) {
            self.read_dir_prefix = PathBuf::from(v);
        }
        if let Some(v) = lookup(ENV_WRITE_DIRS) {
            self.write_dir_prefixes = std::env::split_paths(&v).collect();
        }
    }

    pub fn cache_ttl(&self) -> Duration {
        Duration::from_secs_f64(self.cache_ttl_secs.max(0.0))
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.request_timeout_secs.max(0.001))
    }

    pub fn validate(&self) -> ClientResult<()> {
        if !self.cache_ttl_secs.is_finite() || self.cache_ttl_secs < 0.0 {
            return Err(ClientError::Config("cache_ttl_secs must be >= 0".into()));
        }
        if !self.use_fake_backend {
            url::Url::parse(&self.base_url)
                .map_err(|e| ClientError::Config(format!("base_url {:?}: {e}", self.base_url)))?;
        }
        Ok(())
    }
}
