//! Event registry, batch pipeline, review workflow and HTTP API.

pub mod api;
pub mod app;
pub mod config;
pub mod pipeline;
pub mod scheduler;
pub mod store;

use thiserror::Error;

pub use app::{
    App, BatchSummary, ClaimView, EventDetail, EventRecord, EventStatus, EventSummary,
    ProjectionView, RegisterPayload, ReportKind, ReviewAction, ReviewKind, TruthPointView,
};
pub use config::Config;
pub use pipeline::{Extractor, Pipeline};

/// Version tag carried by every API response.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("rejected: {0}")]
    Rejected(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Rejected(_) => "rejected",
            ServiceError::State(_) => "invalid_state",
            ServiceError::Input(_) => "invalid_input",
            ServiceError::Config(_) => "config",
            ServiceError::Io(_) => "io",
            ServiceError::Internal(_) => "internal",
        }
    }
}
