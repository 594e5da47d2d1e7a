use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoadgenError {
    #[error("no records to summarize")]
    EmptyRecords,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("store error: {0}")]
    Store(#[from] condb_core::StoreError),
    #[error("client error: {0}")]
    Client(#[from] condb_client::ClientError),
    #[error("service error: {0}")]
    Serve(#[from] condb_service::ServeError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl LoadgenError {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        LoadgenError::Io {
            context: context.into(),
            source,
        }
    }
}

pub type LoadgenResult<T> = Result<T, LoadgenError>;
