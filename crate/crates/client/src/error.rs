use std::path::PathBuf;

use condb_core::api::ApiError;
use condb_core::Checksum;
use thiserror::Error;

use crate::insert::InsertStep;

#[derive(Debug, Error)]
pub enum ClientError {
    /// The service answered with an error document.
    #[error("service error {0}")]
    Api(#[from] ApiError),

    #[error("cannot reach the conditions service: {0}")]
    Connectivity(String),

    #[error("no payload of type {payload_type:?} valid at ({major}, {minor}) in global tag {global_tag:?}")]
    NoPayload {
        global_tag: String,
        payload_type: String,
        major: u32,
        minor: u32,
    },

    #[error("integrity check failed for {path}: expected {expected}, got {actual}")]
    Integrity {
        path: PathBuf,
        expected: Checksum,
        actual: Checksum,
    },

    /// Insertion refused before anything was copied.
    #[error("insertion refused: {0}")]
    PreCheck(#[source] ApiError),

    #[error("no writable payload directory among {tried:?}")]
    NoWritablePrefix { tried: Vec<PathBuf> },

    /// The payload was stored but the metadata request failed. The file is
    /// kept; retrying the insertion is safe.
    #[error("payload stored at {stored_at} but the insertion request failed: {source}")]
    InsertionFailed {
        stored_at: PathBuf,
        #[source]
        source: Box<ClientError>,
    },

    #[error("insertion interrupted at {step:?}: {reason}")]
    Interrupted { step: InsertStep, reason: String },

    #[error("invalid client configuration: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl ClientError {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        ClientError::Io {
            context: context.into(),
            source,
        }
    }

    /// Machine-readable service error code, if this came from the service.
    pub fn api_code(&self) -> Option<&str> {
        match self {
            ClientError::Api(e) | ClientError::PreCheck(e) => Some(&e.code),
            ClientError::InsertionFailed { source, .. } => source.api_code(),
            _ => None,
        }
    }
}

pub type ClientResult<T> = Result<T, ClientError>;
