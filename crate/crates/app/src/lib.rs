//! Command-line runner and session HTTP service for the drag-editing engine.
//!
//! [`pipeline`] holds the stage functions both front ends call; [`service`]
//! is the axum app; [`synth`] writes the synthetic scenarios as files.

pub mod config;
pub mod pipeline;
pub mod service;
pub mod synth;

/// Invalid input (exit 2, HTTP 422) or a failure while running (exit 1).
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Invalid(_) => 2,
            AppError::Runtime(_) => 1,
        }
    }
}
