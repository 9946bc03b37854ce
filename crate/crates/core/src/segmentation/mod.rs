//! Prompt model and the promptable-segmenter contract.
//!
//! Every backend implements the same three calls: construct from a
//! [`SegmenterConfig`], [`Segmenter::set_image`], then
//! [`Segmenter::predict_mask`] any number of times. [`SegmenterHandle`]
//! wraps a backend and enforces the request checks common to all of them.

mod mock;
mod region_grow;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::ErrorCode;
use crate::mask::{MaskMap, ObjectId, PixelBox};
use crate::plugin;
use crate::video::Frame;

pub use mock::MockSegmenter;
pub use region_grow::{flood_fill, RegionGrow};

#[derive(Debug, thiserror::Error)]
pub enum SegmentationError {
    #[error("unknown segmenter backend `{0}`")]
    UnknownBackend(String),
    #[error("invalid segmenter configuration: {0}")]
    Config(String),
    #[error("cannot load backend: {0}")]
    Load(String),
    #[error("no image set; call set_image before predict_mask")]
    NoImage,
    #[error("backend `{backend}` does not support {kind} prompts")]
    Capability { backend: String, kind: PromptKind },
    #[error("invalid prompt: {0}")]
    Prompt(String),
    #[error("backend returned a {got:?} mask for a {expected:?} image")]
    Shape { got: (u32, u32), expected: (u32, u32) },
    #[error("backend failure: {0}")]
    Backend(String),
}

impl SegmentationError {
    pub fn code(&self) -> ErrorCode {
        match self {
            SegmentationError::UnknownBackend(_) | SegmentationError::Config(_) => ErrorCode::ConfigError,
            SegmentationError::Load(_) => ErrorCode::LoadError,
            SegmentationError::NoImage => ErrorCode::StateError,
            SegmentationError::Capability { .. } => ErrorCode::CapabilityError,
            SegmentationError::Prompt(_) => ErrorCode::PromptError,
            SegmentationError::Shape { .. } => ErrorCode::ShapeError,
            SegmentationError::Backend(_) => ErrorCode::Internal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PointPrompt {
    pub x: u32,
    pub y: u32,
    pub polarity: Polarity,
}

impl PointPrompt {
    pub fn positive(x: u32, y: u32) -> Self {
        PointPrompt { x, y, polarity: Polarity::Positive }
    }

    pub fn negative(x: u32, y: u32) -> Self {
        PointPrompt { x, y, polarity: Polarity::Negative }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoxPrompt(pub PixelBox);

/// Prompt kinds in the order they are listed in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Box,
    Point,
    Both,
}

impl PromptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Box => "box",
            PromptKind::Point => "point",
            PromptKind::Both => "both",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// All prompts for one object on one frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectPromptSet {
    pub object_id: ObjectId,
    #[serde(default)]
    pub points: Vec<PointPrompt>,
    #[serde(default)]
    pub boxes: Vec<BoxPrompt>,
}

impl ObjectPromptSet {
    pub fn points(object_id: ObjectId, points: Vec<PointPrompt>) -> Self {
        ObjectPromptSet { object_id, points, boxes: Vec::new() }
    }

    pub fn boxes(object_id: ObjectId, boxes: Vec<PixelBox>) -> Self {
        ObjectPromptSet {
            object_id,
            points: Vec::new(),
            boxes: boxes.into_iter().map(BoxPrompt).collect(),
        }
    }

    pub fn kind(&self) -> Option<PromptKind> {
        match (self.points.is_empty(), self.boxes.is_empty()) {
            (false, false) => Some(PromptKind::Both),
            (false, true) => Some(PromptKind::Point),
            (true, false) => Some(PromptKind::Box),
            (true, true) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmenterDescriptor {
    pub name: String,
    pub supported_prompts: BTreeSet<PromptKind>,
}

impl SegmenterDescriptor {
    pub fn new(name: impl Into<String>, kinds: &[PromptKind]) -> Self {
        SegmenterDescriptor {
            name: name.into(),
            supported_prompts: kinds.iter().copied().collect(),
        }
    }
}

/// Backend selection plus free-form parameters. Neural adapters read the
/// weight locator and device selector as opaque strings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmenterConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, String>,
}

impl SegmenterConfig {
    pub fn named(name: impl Into<String>) -> Self {
        SegmenterConfig { name: name.into(), ..Default::default() }
    }

    pub fn with_param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    pub(crate) fn parse_param<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, SegmentationError> {
        match self.params.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| SegmentationError::Config(format!("parameter `{key}` has invalid value `{raw}`"))),
        }
    }
}

pub trait Segmenter: Send {
    fn descriptor(&self) -> &SegmenterDescriptor;

    fn set_image(&mut self, frame: &Frame) -> Result<(), SegmentationError>;

    /// Called only with requests already checked by [`SegmenterHandle`].
    fn predict_mask(&mut self, prompts: &[ObjectPromptSet]) -> Result<MaskMap, SegmentationError>;

    /// Peak accelerator or model memory in MiB, when the backend can tell.
    fn peak_memory_mb(&self) -> Option<f64> {
        None
    }
}

/// Ready backend with the shared request checks in front of it.
pub struct SegmenterHandle {
    inner: Box<dyn Segmenter>,
    image: Option<(u32, u32)>,
    init_duration: Duration,
}

impl fmt::Debug for SegmenterHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SegmenterHandle")
            .field("backend", &self.inner.descriptor().name)
            .field("image", &self.image)
            .finish()
    }
}

impl SegmenterHandle {
    pub fn new(inner: Box<dyn Segmenter>, init_duration: Duration) -> Self {
        SegmenterHandle { inner, image: None, init_duration }
    }

    pub fn descriptor(&self) -> &SegmenterDescriptor {
        self.inner.descriptor()
    }

    /// Time spent constructing the backend.
    pub fn init_duration(&self) -> Duration {
        self.init_duration
    }

    pub fn peak_memory_mb(&self) -> Option<f64> {
        self.inner.peak_memory_mb()
    }

    pub fn set_image(&mut self, frame: &Frame) -> Result<(), SegmentationError> {
        self.inner.set_image(frame)?;
        self.image = Some(frame.dimensions());
        Ok(())
    }

    pub fn predict_mask(&mut self, prompts: &[ObjectPromptSet]) -> Result<MaskMap, SegmentationError> {
        let dims = self.image.ok_or(SegmentationError::NoImage)?;
        validate_prompts(self.inner.descriptor(), prompts, dims)?;
        let mut mask = self.inner.predict_mask(prompts)?;
        if mask.dimensions() != dims {
            return Err(SegmentationError::Shape { got: mask.dimensions(), expected: dims });
        }
        let requested: BTreeSet<ObjectId> = prompts.iter().map(|p| p.object_id).collect();
        if mask.visible_objects().iter().any(|id| !requested.contains(id)) {
            return Err(SegmentationError::Backend("mask contains unrequested objects".into()));
        }
        for id in &requested {
            mask.declare(*id);
        }
        mask.retain_objects(&requested);
        Ok(mask)
    }
}

/// Request checks shared by every backend.
pub fn validate_prompts(
    descriptor: &SegmenterDescriptor,
    prompts: &[ObjectPromptSet],
    (width, height): (u32, u32),
) -> Result<(), SegmentationError> {
    if prompts.is_empty() {
        return Err(SegmentationError::Prompt("no objects in request".into()));
    }
    let mut seen = BTreeSet::new();
    for set in prompts {
        if !seen.insert(set.object_id) {
            return Err(SegmentationError::Prompt(format!("object {} appears twice", set.object_id)));
        }
        let kind = set
            .kind()
            .ok_or_else(|| SegmentationError::Prompt(format!("object {} has no points or boxes", set.object_id)))?;
        if !descriptor.supported_prompts.contains(&kind) {
            return Err(SegmentationError::Capability { backend: descriptor.name.clone(), kind });
        }
        for p in &set.points {
            if p.x >= width || p.y >= height {
                return Err(SegmentationError::Prompt(format!(
                    "point ({}, {}) outside {width}x{height} frame",
                    p.x, p.y
                )));
            }
        }
        for b in &set.boxes {
            b.0.validate(width, height)
                .map_err(|e| SegmentationError::Prompt(e.to_string()))?;
        }
    }
    Ok(())
}

type SegmenterFactory = Arc<dyn Fn(&SegmenterConfig) -> Result<Box<dyn Segmenter>, SegmentationError> + Send + Sync>;

/// Backends keyed by name.
#[derive(Clone)]
pub struct SegmenterRegistry {
    factories: HashMap<String, (SegmenterDescriptor, SegmenterFactory)>,
}

impl fmt::Debug for SegmenterRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.names()).finish()
    }
}

impl Default for SegmenterRegistry {
    fn default() -> Self {
        Self::with_defaults()
    }
}

impl SegmenterRegistry {
    pub fn empty() -> Self {
        SegmenterRegistry { factories: HashMap::new() }
    }

    /// The reference backend, the timing mock, and the two neural adapters
    /// (which need a weight locator and a plugin command to load).
    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register(RegionGrow::descriptor_static(), |cfg| Ok(Box::new(RegionGrow::from_config(cfg)?)));
        r.register(MockSegmenter::descriptor_static(), |cfg| Ok(Box::new(MockSegmenter::from_config(cfg)?)));
        for descriptor in plugin::neural_segmenters() {
            let d = descriptor.clone();
            r.register(descriptor, move |cfg| {
                Ok(Box::new(plugin::ProcessSegmenter::spawn(d.clone(), cfg)?))
            });
        }
        r
    }

    pub fn register<F>(&mut self, descriptor: SegmenterDescriptor, factory: F)
    where
        F: Fn(&SegmenterConfig) -> Result<Box<dyn Segmenter>, SegmentationError> + Send + Sync + 'static,
    {
        self.factories
            .insert(descriptor.name.clone(), (descriptor, Arc::new(factory)));
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<_> = self.factories.keys().cloned().collect();
        names.sort();
        names
    }

    pub fn descriptors(&self) -> Vec<SegmenterDescriptor> {
        let mut d: Vec<_> = self.factories.values().map(|(d, _)| d.clone()).collect();
        d.sort_by(|a, b| a.name.cmp(&b.name));
        d
    }

    pub fn descriptor(&self, name: &str) -> Option<&SegmenterDescriptor> {
        self.factories.get(name).map(|(d, _)| d)
    }

    /// Constructs a backend and times its initialization.
    pub fn init(&self, config: &SegmenterConfig) -> Result<SegmenterHandle, SegmentationError> {
        let (_, factory) = self
            .factories
            .get(&config.name)
            .ok_or_else(|| SegmentationError::UnknownBackend(config.name.clone()))?;
        let started = Instant::now();
        let backend = factory(config)?;
        Ok(SegmenterHandle::new(backend, started.elapsed()))
    }
}

/// Convenience over [`SegmenterRegistry::init`].
pub fn segmenter_init(registry: &SegmenterRegistry, config: &SegmenterConfig) -> Result<SegmenterHandle, SegmentationError> {
    registry.init(config)
}
