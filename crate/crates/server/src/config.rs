use std::path::PathBuf;

use trackmark_core::session::DEFAULT_MAX_FRAMES;
use trackmark_core::ErrorCode;

use crate::error::ApiError;

pub const ENV_STORAGE_ROOT: &str = "TRACKMARK_STORAGE_ROOT";
pub const ENV_PORT: &str = "TRACKMARK_PORT";
pub const ENV_DEFAULT_BACKEND: &str = "TRACKMARK_DEFAULT_BACKEND";
pub const ENV_DEFAULT_TRACKER: &str = "TRACKMARK_DEFAULT_TRACKER";
pub const ENV_MAX_FRAMES: &str = "TRACKMARK_MAX_FRAMES";
pub const ENV_MAX_UPLOAD_MB: &str = "TRACKMARK_MAX_UPLOAD_MB";

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_BACKEND: &str = "region-grow";
pub const DEFAULT_TRACKER: &str = "baseline-ncc";
pub const DEFAULT_MAX_UPLOAD_MB: u64 = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceConfig {
    pub storage_root: PathBuf,
    pub port: u16,
    pub default_backend: String,
    pub default_tracker: String,
    pub max_frames: u32,
    pub max_upload_mb: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            storage_root: PathBuf::from("trackmark-data"),
            port: DEFAULT_PORT,
            default_backend: DEFAULT_BACKEND.into(),
            default_tracker: DEFAULT_TRACKER.into(),
            max_frames: DEFAULT_MAX_FRAMES,
            max_upload_mb: DEFAULT_MAX_UPLOAD_MB,
        }
    }
}

fn parse<T: std::str::FromStr>(var: &str, raw: &str) -> Result<T, ApiError> {
    raw.parse()
        .map_err(|_| ApiError::new(ErrorCode::ConfigError, format!("{var}: invalid value `{raw}`")))
}

impl ServiceConfig {
    /// Defaults overridden by the `TRACKMARK_*` environment variables.
    pub fn from_env() -> Result<Self, ApiError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, ApiError> {
        let mut c = ServiceConfig::default();
        if let Some(v) = get(ENV_STORAGE_ROOT) {
            c.storage_root = PathBuf::from(v);
        }
        if let Some(v) = get(ENV_PORT) {
            c.port = parse(ENV_PORT, &v)?;
        }
        if let Some(v) = get(ENV_DEFAULT_BACKEND) {
            c.default_backend = v;
        }
        if let Some(v) = get(ENV_DEFAULT_TRACKER) {
            c.default_tracker = v;
        }
        if let Some(v) = get(ENV_MAX_FRAMES) {
            c.max_frames = parse(ENV_MAX_FRAMES, &v)?;
        }
        if let Some(v) = get(ENV_MAX_UPLOAD_MB) {
            c.max_upload_mb = parse(ENV_MAX_UPLOAD_MB, &v)?;
        }
        if c.max_frames == 0 {
            return Err(ApiError::new(ErrorCode::ConfigError, format!("{ENV_MAX_FRAMES} must be at least 1")));
        }
        Ok(c)
    }
}
