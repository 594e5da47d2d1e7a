//! Persistence for the conditions schema.
//!
//! [`SqliteStore`] is the production backend. [`MemoryStore`] is a small
//! in-process database with the same behaviour, used by the client's fake
//! backend and by tests.

mod memory;
mod sqlite;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{
    GlobalTag, GlobalTagDescription, GlobalTagStatus, NewPayloadIov, PayloadIov, PayloadList,
    PayloadType, ResolutionResult,
};
use crate::error::StoreResult;
use crate::iov::IovPoint;

pub use memory::MemoryStore;
pub use sqlite::{SqliteStore, COVERING_INDEX, IOV_TABLE};

/// Current on-disk schema version.
pub const SCHEMA_VERSION: u32 = 1;

/// How the hot resolution query is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum ResolutionStrategy {
    /// One lookup statement per payload list, issued in a loop.
    #[serde(rename = "naive", alias = "naive_per_type")]
    NaivePerType,
    /// A single statement selecting the top-1 start per list from the covering index.
    #[default]
    #[serde(rename = "optimized", alias = "optimized_single_query")]
    OptimizedSingleQuery,
}

impl ResolutionStrategy {
    pub const ALL: [ResolutionStrategy; 2] = [
        ResolutionStrategy::NaivePerType,
        ResolutionStrategy::OptimizedSingleQuery,
    ];

    /// Short name used in query strings and reports.
    pub fn as_str(self) -> &'static str {
        match self {
            ResolutionStrategy::NaivePerType => "naive",
            ResolutionStrategy::OptimizedSingleQuery => "optimized",
        }
    }
}

impl FromStr for ResolutionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" | "naive_per_type" => Ok(ResolutionStrategy::NaivePerType),
            "optimized" | "optimized_single_query" => Ok(ResolutionStrategy::OptimizedSingleQuery),
            other => Err(format!("unknown resolution strategy {other:?}")),
        }
    }
}

impl fmt::Display for ResolutionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoreConfig {
    /// SQLite database file, or `:memory:` for the in-process store.
    pub database_path: String,
    pub resolution_strategy: ResolutionStrategy,
    pub pool_size: u32,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            database_path: "condb.sqlite".into(),
            resolution_strategy: ResolutionStrategy::OptimizedSingleQuery,
            pool_size: 8,
        }
    }
}

pub const MEMORY_STORE_PATH: &str = ":memory:";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowCounts {
    pub global_tags: u64,
    pub payload_types: u64,
    pub payload_lists: u64,
    pub payload_iovs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HealthReport {
    pub schema_version: u32,
    pub row_counts: RowCounts,
}

/// Storage contract shared by all backends. Implementations are safe to call
/// from many threads at once.
pub trait ConditionsStore: Send + Sync {
    /// Creates tables and indexes; idempotent.
    fn migrate(&self) -> StoreResult<()>;

    fn create_global_tag(&self, name: &str) -> StoreResult<GlobalTag>;

    /// Setting the current status again is a no-op.
    fn set_global_tag_status(&self, name: &str, status: GlobalTagStatus) -> StoreResult<GlobalTag>;

    fn create_payload_type(&self, name: &str) -> StoreResult<PayloadType>;

    fn attach_payload_list(&self, tag: &str, payload_type: &str) -> StoreResult<PayloadList>;

    fn insert_payload_iov(
        &self,
        tag: &str,
        payload_type: &str,
        iov: NewPayloadIov,
    ) -> StoreResult<PayloadIov>;

    /// Inserts many IoVs into one list atomically. Used for scenario population.
    fn insert_payload_iovs_bulk(
        &self,
        tag: &str,
        payload_type: &str,
        iovs: Vec<NewPayloadIov>,
    ) -> StoreResult<usize>;

    /// The hot query: for every payload list of `tag`, the IoV with the
    /// greatest start not after `point`, ordered by payload type name.
    fn resolve_payload_iovs(
        &self,
        tag: &str,
        point: IovPoint,
        strategy: ResolutionStrategy,
    ) -> StoreResult<Vec<ResolutionResult>>;

    fn list_global_tags(&self) -> StoreResult<Vec<GlobalTag>>;

    fn list_payload_types(&self) -> StoreResult<Vec<PayloadType>>;

    fn describe_global_tag(&self, name: &str) -> StoreResult<GlobalTagDescription>;

    /// All IoVs of one list in start order.
    fn list_payload_iovs(&self, tag: &str, payload_type: &str) -> StoreResult<Vec<PayloadIov>>;

    /// Distinct payload URLs referenced by any IoV, sorted.
    fn payload_urls(&self) -> StoreResult<Vec<String>>;

    fn health(&self) -> StoreResult<HealthReport>;
}

/// Opens the backend named by `config` and migrates it.
pub fn open_store(config: &StoreConfig) -> StoreResult<Arc<dyn ConditionsStore>> {
    if config.database_path == MEMORY_STORE_PATH {
        return Ok(Arc::new(MemoryStore::new()));
    }
    let store = SqliteStore::open(&config.database_path, config.pool_size)?;
    store.migrate()?;
    Ok(Arc::new(store))
}

#[cfg(test)]
mod tests;
