//! Crate-wide error type and the closed set of machine-readable codes.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bench::BenchError;
use crate::export::ExportError;
use crate::mask::MaskError;
use crate::segmentation::SegmentationError;
use crate::session::SessionError;
use crate::tracking::TrackingError;
use crate::video::VideoError;

/// Stable error codes. Every module error maps onto exactly one of these,
/// and the HTTP service and the CLI report nothing else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorCode {
    OpenError,
    EmptyVideo,
    RangeError,
    WriteError,
    ShapeError,
    EmptyObject,
    ConfigError,
    LoadError,
    StateError,
    CapabilityError,
    PromptError,
    SeedError,
    ExportError,
    Cancelled,
    Busy,
    NotFound,
    BadRequest,
    Internal,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 18] = [
        ErrorCode::OpenError,
        ErrorCode::EmptyVideo,
        ErrorCode::RangeError,
        ErrorCode::WriteError,
        ErrorCode::ShapeError,
        ErrorCode::EmptyObject,
        ErrorCode::ConfigError,
        ErrorCode::LoadError,
        ErrorCode::StateError,
        ErrorCode::CapabilityError,
        ErrorCode::PromptError,
        ErrorCode::SeedError,
        ErrorCode::ExportError,
        ErrorCode::Cancelled,
        ErrorCode::Busy,
        ErrorCode::NotFound,
        ErrorCode::BadRequest,
        ErrorCode::Internal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::OpenError => "open-error",
            ErrorCode::EmptyVideo => "empty-video",
            ErrorCode::RangeError => "range-error",
            ErrorCode::WriteError => "write-error",
            ErrorCode::ShapeError => "shape-error",
            ErrorCode::EmptyObject => "empty-object",
            ErrorCode::ConfigError => "config-error",
            ErrorCode::LoadError => "load-error",
            ErrorCode::StateError => "state-error",
            ErrorCode::CapabilityError => "capability-error",
            ErrorCode::PromptError => "prompt-error",
            ErrorCode::SeedError => "seed-error",
            ErrorCode::ExportError => "export-error",
            ErrorCode::Cancelled => "cancelled",
            ErrorCode::Busy => "busy",
            ErrorCode::NotFound => "not-found",
            ErrorCode::BadRequest => "bad-request",
            ErrorCode::Internal => "internal",
        }
    }

    /// Process exit status used by the CLI. Usage errors use 2 (clap's
    /// convention), validation failures 1, everything else starts at 10.
    pub fn exit_status(self) -> i32 {
        10 + Self::ALL.iter().position(|c| *c == self).unwrap_or(0) as i32
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Tracking(#[from] TrackingError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error(transparent)]
    Bench(#[from] BenchError),
}

impl Error {
    pub fn code(&self) -> ErrorCode {
        match self {
            Error::Video(e) => e.code(),
            Error::Mask(e) => e.code(),
            Error::Segmentation(e) => e.code(),
            Error::Tracking(e) => e.code(),
            Error::Session(e) => e.code(),
            Error::Export(e) => e.code(),
            Error::Bench(e) => e.code(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_unique_and_round_trip_through_serde() {
        let mut seen = std::collections::HashSet::new();
        for code in ErrorCode::ALL {
            assert!(seen.insert(code.as_str()));
            let json = serde_json::to_string(&code).unwrap();
            assert_eq!(json, format!("\"{}\"", code.as_str()));
            let back: ErrorCode = serde_json::from_str(&json).unwrap();
            assert_eq!(back, code);
        }
    }

    #[test]
    fn exit_statuses_are_distinct_and_clear_of_usage_status() {
        let mut seen = std::collections::HashSet::new();
        for code in ErrorCode::ALL {
            let status = code.exit_status();
            assert!(status >= 10);
            assert!(seen.insert(status));
        }
    }
}
