//! Conditions database core: schema entities, IoV encoding, storage
//! backends, and the transport-independent REST request handler.

pub mod api;
pub mod domain;
pub mod error;
pub mod iov;
pub mod store;

pub use domain::{
    oracle_resolve, validate_insertion, Checksum, GlobalTag, GlobalTagDescription,
    GlobalTagStatus, NewPayloadIov, PayloadIov, PayloadList, PayloadType, ResolutionResult,
    TagContents, Timestamp,
};
pub use error::{DomainError, StoreError, StoreResult};
pub use iov::{combine_iov, split_iov, CombinedIov, IovPoint};
pub use store::{open_store, ConditionsStore, MemoryStore, ResolutionStrategy, SqliteStore, StoreConfig};
