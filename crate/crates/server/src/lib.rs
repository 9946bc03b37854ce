//! HTTP service and command-line front end for annotation sessions.

pub mod api;
pub mod cli;
pub mod config;
pub mod error;
pub mod workflow;

pub use api::{router, AppState};
pub use config::ServiceConfig;
pub use error::{ApiError, ApiResult};
