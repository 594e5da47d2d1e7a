use thiserror::Error;

use crate::iov::IovPoint;

/// Violations of value-level rules. Pure, no I/O involved.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("{field} = {value} is out of range (must be < 2^32)")]
    IovOutOfRange { field: &'static str, value: u64 },

    #[error("invalid {kind} name {name:?}: {reason}")]
    InvalidName {
        kind: &'static str,
        name: String,
        reason: &'static str,
    },

    #[error("invalid checksum {value:?}: expected {expected_len} lowercase hex characters")]
    InvalidChecksum { value: String, expected_len: usize },

    #[error("invalid payload url {value:?}: {reason}")]
    InvalidPayloadUrl { value: String, reason: &'static str },

    #[error("IoV start {new} overlaps existing start {existing} in the same payload list")]
    OverlappingStart { existing: IovPoint, new: IovPoint },
}

/// Entity kinds, used to name what was missing or already present.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntityKind {
    GlobalTag,
    PayloadType,
    PayloadList,
}

impl EntityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::GlobalTag => "global tag",
            EntityKind::PayloadType => "payload type",
            EntityKind::PayloadList => "payload list",
        }
    }
}

impl std::fmt::Display for EntityKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Validation(#[from] DomainError),

    #[error("{kind} {name:?} not found")]
    NotFound { kind: EntityKind, name: String },

    #[error("{kind} {name:?} already exists")]
    AlreadyExists { kind: EntityKind, name: String },

    #[error("payload list {list} already has an IoV starting at {existing}")]
    DuplicateStart { list: String, existing: IovPoint },

    #[error("global tag {0:?} is locked")]
    Locked(String),

    #[error("schema version conflict: {0}")]
    SchemaConflict(String),

    #[error("store unavailable: {0}")]
    Unavailable(String),

    #[error("store backend error: {0}")]
    Backend(String),
}

impl From<rusqlite::Error> for StoreError {
    fn from(e: rusqlite::Error) -> Self {
        StoreError::Backend(e.to_string())
    }
}

impl From<r2d2::Error> for StoreError {
    fn from(e: r2d2::Error) -> Self {
        StoreError::Unavailable(e.to_string())
    }
}

pub type StoreResult<T> = Result<T, StoreError>;
