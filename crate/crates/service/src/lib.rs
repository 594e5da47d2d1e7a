//! REST front-end for the conditions database.
//!
//! Routes and JSON bodies are documented in `docs/wire-schema.md`. Request
//! handling itself lives in [`condb_core::api`]; this crate adds HTTP
//! transport, admission control and request logging.

pub mod config;
mod server;

pub use config::{ConfigError, ServiceConfig};
pub use server::{bind, router, serve, BackgroundServer, ServeError, ServiceOptions};
