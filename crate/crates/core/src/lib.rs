//! Interactive video annotation: promptable segmentation, mask propagation,
//! correction, YOLO export and backend benchmarking.
//!
//! Geometry and export arithmetic is generic over [`Scalar`]; the aliases
//! below fix the common choices.

pub mod bench;
pub mod error;
pub mod export;
pub mod fixture;
pub mod mask;
pub mod plugin;
pub mod scalar;
pub mod segmentation;
pub mod session;
pub mod tracking;
pub mod video;

pub use error::{Error, ErrorCode, Result};
pub use mask::{MaskMap, ObjectId, PixelBox, YoloBox};
pub use scalar::{FloatScalar, Rational, Scalar};
pub use session::{Engines, Session};
pub use video::{open_video, Frame, VideoSource};

pub type YoloBoxF32 = YoloBox<f32>;
pub type YoloBoxF64 = YoloBox<f64>;
pub type YoloBoxExact = YoloBox<Rational>;

pub type CorrelationTrackerF32 = tracking::CorrelationTracker<f32>;
pub type CorrelationTrackerF64 = tracking::CorrelationTracker<f64>;
