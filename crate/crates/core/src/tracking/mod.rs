//! Mask-propagation contract and the classical backends.
//!
//! A tracker receives frames plus one seed mask and produces a mask for
//! every frame. Backends that support reseeding keep the reseeded masks as
//! permanent keyframes: propagation after a keyframe always starts from it.

mod hold;
mod ncc;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::ErrorCode;
use crate::mask::MaskMap;
use crate::plugin;
use crate::video::Frame;

pub use hold::HoldTracker;
pub use ncc::{ncc_score, CorrelationTracker, CorrelationTrackerConfig};

/// Baseline tracker at double precision.
pub type BaselineTracker = CorrelationTracker<f64>;

#[derive(Debug, thiserror::Error)]
pub enum TrackingError {
    #[error("unknown tracker backend `{0}`")]
    UnknownBackend(String),
    #[error("invalid tracker configuration: {0}")]
    Config(String),
    #[error("cannot load tracker: {0}")]
    Load(String),
    #[error("frame {index} is {got:?}, seed mask is {expected:?}")]
    Shape {
        index: usize,
        got: (u32, u32),
        expected: (u32, u32),
    },
    #[error("invalid seed: {0}")]
    Seed(String),
    #[error("tracker `{backend}` does not support {capability}")]
    Capability { backend: String, capability: &'static str },
    #[error("tracker state: {0}")]
    State(String),
    #[error("propagation cancelled")]
    Cancelled,
    #[error("tracker failure: {0}")]
    Backend(String),
}

impl TrackingError {
    pub fn code(&self) -> ErrorCode {
        match self {
            TrackingError::UnknownBackend(_) | TrackingError::Config(_) => ErrorCode::ConfigError,
            TrackingError::Load(_) => ErrorCode::LoadError,
            TrackingError::Shape { .. } => ErrorCode::ShapeError,
            TrackingError::Seed(_) => ErrorCode::SeedError,
            TrackingError::Capability { .. } => ErrorCode::CapabilityError,
            TrackingError::State(_) => ErrorCode::StateError,
            TrackingError::Cancelled => ErrorCode::Cancelled,
            TrackingError::Backend(_) => ErrorCode::Internal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackerDescriptor {
    pub name: String,
    pub supports_reseed: bool,
    /// Whether the backend can suggest frames for human correction.
    #[serde(default)]
    pub suggests_candidates: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, String>,
}

impl TrackerConfig {
    pub fn named(name: impl Into<String>) -> Self {
        TrackerConfig { name: name.into(), ..Default::default() }
    }

    pub fn with_param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    pub(crate) fn parse_param<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, TrackingError> {
        match self.params.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| TrackingError::Config(format!("parameter `{key}` has invalid value `{raw}`"))),
        }
    }
}

/// Frames to propagate over, with the seed at `seed_index`.
#[derive(Debug, Clone)]
pub struct PropagationRequest {
    pub frames: Vec<Frame>,
    pub seed_index: usize,
    pub seed_mask: MaskMap,
}

impl PropagationRequest {
    pub fn validate(&self) -> Result<(), TrackingError> {
        if self.frames.is_empty() {
            return Err(TrackingError::Seed("no frames to propagate over".into()));
        }
        if self.seed_index >= self.frames.len() {
            return Err(TrackingError::Seed(format!(
                "seed index {} outside {} frames",
                self.seed_index,
                self.frames.len()
            )));
        }
        if self.seed_mask.object_ids().is_empty() {
            return Err(TrackingError::Seed("seed mask has no objects".into()));
        }
        if self.seed_mask.visible_objects().is_empty() {
            return Err(TrackingError::Seed("seed mask has no object pixels".into()));
        }
        check_dims(&self.frames, &self.seed_mask)
    }
}

pub(crate) fn check_dims(frames: &[Frame], mask: &MaskMap) -> Result<(), TrackingError> {
    let expected = mask.dimensions();
    for (index, f) in frames.iter().enumerate() {
        if f.dimensions() != expected {
            return Err(TrackingError::Shape { index, got: f.dimensions(), expected });
        }
    }
    Ok(())
}

/// Progress reporting and cooperative cancellation for long propagations.
#[derive(Debug, Clone, Default)]
pub struct TrackControl {
    cancelled: Arc<AtomicBool>,
    done: Arc<AtomicUsize>,
    total: Arc<AtomicUsize>,
}

impl TrackControl {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.cancelled.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.cancelled.load(Ordering::SeqCst)
    }

    pub fn start(&self, total: usize) {
        self.done.store(0, Ordering::SeqCst);
        self.total.store(total, Ordering::SeqCst);
    }

    pub fn advance(&self) {
        self.done.fetch_add(1, Ordering::SeqCst);
    }

    /// `(done, total)` frames.
    pub fn progress(&self) -> (usize, usize) {
        (self.done.load(Ordering::SeqCst), self.total.load(Ordering::SeqCst))
    }

    pub fn checkpoint(&self) -> Result<(), TrackingError> {
        if self.is_cancelled() {
            Err(TrackingError::Cancelled)
        } else {
            Ok(())
        }
    }
}

pub trait Tracker: Send {
    fn descriptor(&self) -> &TrackerDescriptor;

    /// One mask per input frame; called only with validated requests.
    fn propagate(&mut self, req: &PropagationRequest, ctl: &TrackControl) -> Result<Vec<MaskMap>, TrackingError>;

    /// Replaces the state at `frame_index` and re-propagates the frames after
    /// it, up to the next keyframe.
    fn reseed(&mut self, frame_index: usize, mask: &MaskMap, ctl: &TrackControl) -> Result<(), TrackingError> {
        let _ = (frame_index, mask, ctl);
        Err(TrackingError::Capability {
            backend: self.descriptor().name.clone(),
            capability: "reseed",
        })
    }

    /// Current masks for every frame of the running propagation.
    fn current_masks(&mut self) -> Result<Vec<MaskMap>, TrackingError>;

    /// Frames the backend would most like a human to correct.
    fn suggest_candidates(&mut self, limit: usize) -> Result<Vec<usize>, TrackingError> {
        let _ = limit;
        Err(TrackingError::Capability {
            backend: self.descriptor().name.clone(),
            capability: "candidate suggestion",
        })
    }
}

/// Backend wrapper enforcing request checks and call ordering.
pub struct TrackerHandle {
    inner: Box<dyn Tracker>,
    frame_count: Option<usize>,
    dims: Option<(u32, u32)>,
}

impl fmt::Debug for TrackerHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TrackerHandle")
            .field("backend", &self.inner.descriptor().name)
            .field("frame_count", &self.frame_count)
            .finish()
    }
}

impl TrackerHandle {
    pub fn new(inner: Box<dyn Tracker>) -> Self {
        TrackerHandle { inner, frame_count: None, dims: None }
    }

    pub fn descriptor(&self) -> &TrackerDescriptor {
        self.inner.descriptor()
    }

    pub fn propagate(&mut self, req: &PropagationRequest, ctl: &TrackControl) -> Result<Vec<MaskMap>, TrackingError> {
        req.validate()?;
        let mut out = self.inner.propagate(req, ctl)?;
        check_output(&out, req.frames.len(), req.seed_mask.dimensions())?;
        // The seed frame is returned verbatim whatever the backend did.
        out[req.seed_index] = req.seed_mask.clone();
        self.frame_count = Some(req.frames.len());
        self.dims = Some(req.seed_mask.dimensions());
        Ok(out)
    }

    pub fn reseed(&mut self, frame_index: usize, mask: &MaskMap, ctl: &TrackControl) -> Result<(), TrackingError> {
        let descriptor = self.inner.descriptor();
        if !descriptor.supports_reseed {
            return Err(TrackingError::Capability {
                backend: descriptor.name.clone(),
                capability: "reseed",
            });
        }
        let (Some(count), Some(dims)) = (self.frame_count, self.dims) else {
            return Err(TrackingError::State("reseed before propagate".into()));
        };
        if frame_index >= count {
            return Err(TrackingError::Seed(format!("reseed index {frame_index} outside {count} frames")));
        }
        if mask.dimensions() != dims {
            return Err(TrackingError::Shape { index: frame_index, got: mask.dimensions(), expected: dims });
        }
        if mask.object_ids().is_empty() {
            return Err(TrackingError::Seed("reseed mask has no objects".into()));
        }
        self.inner.reseed(frame_index, mask, ctl)
    }

    pub fn current_masks(&mut self) -> Result<Vec<MaskMap>, TrackingError> {
        let (Some(count), Some(dims)) = (self.frame_count, self.dims) else {
            return Err(TrackingError::State("no propagation has run".into()));
        };
        let out = self.inner.current_masks()?;
        check_output(&out, count, dims)?;
        Ok(out)
    }

    pub fn suggest_candidates(&mut self, limit: usize) -> Result<Vec<usize>, TrackingError> {
        if !self.inner.descriptor().suggests_candidates {
            return Err(TrackingError::Capability {
                backend: self.inner.descriptor().name.clone(),
                capability: "candidate suggestion",
            });
        }
        self.inner.suggest_candidates(limit)
    }
}

fn check_output(out: &[MaskMap], count: usize, dims: (u32, u32)) -> Result<(), TrackingError> {
    if out.len() != count {
        return Err(TrackingError::Backend(format!("{} masks for {count} frames", out.len())));
    }
    if let Some((index, m)) = out.iter().enumerate().find(|(_, m)| m.dimensions() != dims) {
        return Err(TrackingError::Shape { index, got: m.dimensions(), expected: dims });
    }
    Ok(())
}

type TrackerFactory = Arc<dyn Fn(&TrackerConfig) -> Result<Box<dyn Tracker>, TrackingError> + Send + Sync>;

#[derive(Clone)]
pub struct TrackerRegistry {
    factories: HashMap<String, (TrackerDescriptor, TrackerFactory)>,
}

impl fmt::Debug for TrackerRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.descriptors().iter().map(|d| &d.name)).finish()
    }
}

impl Default for TrackerRegistry {
    fn default() -> Self {
        Self::with_defaults()
    }
}

impl TrackerRegistry {
    pub fn empty() -> Self {
        TrackerRegistry { factories: HashMap::new() }
    }

    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register(CorrelationTracker::<f64>::descriptor_static(), |cfg| {
            Ok(Box::new(CorrelationTracker::<f64>::from_config(cfg)?))
        });
        r.register(HoldTracker::descriptor_static(), |_| Ok(Box::new(HoldTracker::new())));
        let d = plugin::memory_tracker();
        r.register(d.clone(), move |cfg| Ok(Box::new(plugin::ProcessTracker::spawn(d.clone(), cfg)?)));
        r
    }

    pub fn register<F>(&mut self, descriptor: TrackerDescriptor, factory: F)
    where
        F: Fn(&TrackerConfig) -> Result<Box<dyn Tracker>, TrackingError> + Send + Sync + 'static,
    {
        self.factories
            .insert(descriptor.name.clone(), (descriptor, Arc::new(factory)));
    }

    pub fn descriptors(&self) -> Vec<TrackerDescriptor> {
        let mut d: Vec<_> = self.factories.values().map(|(d, _)| d.clone()).collect();
        d.sort_by(|a, b| a.name.cmp(&b.name));
        d
    }

    pub fn descriptor(&self, name: &str) -> Option<&TrackerDescriptor> {
        self.factories.get(name).map(|(d, _)| d)
    }

    pub fn init(&self, config: &TrackerConfig) -> Result<TrackerHandle, TrackingError> {
        let (_, factory) = self
            .factories
            .get(&config.name)
            .ok_or_else(|| TrackingError::UnknownBackend(config.name.clone()))?;
        Ok(TrackerHandle::new(factory(config)?))
    }
}

/// Object ids of every output must come from the keyframes.
pub(crate) fn tracked_objects<'a>(keyframes: impl Iterator<Item = &'a MaskMap>) -> BTreeSet<crate::mask::ObjectId> {
    keyframes.flat_map(|m| m.object_ids().iter().copied()).collect()
}
