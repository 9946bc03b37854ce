//! Annotation sessions: classes, objects, segments and per-frame masks,
//! persisted as a directory.
//!
//! Layout:
//!
//! ```text
//! <dir>/session.json        metadata and event history
//! <dir>/source.gif|source/  private copy of the video
//! <dir>/seeds/<frame>.png   prompted seed masks
//! <dir>/keyframes/<frame>.png  correction masks
//! <dir>/masks/<frame>.png   tracked masks
//! ```
//!
//! Label images are 16-bit single-channel PNGs named by the frame index
//! padded to six digits. `session.json` carries no wall-clock data, so the
//! same operations always leave byte-identical directories behind.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::ErrorCode;
use crate::mask::{MaskError, MaskMap, ObjectId};
use crate::segmentation::{ObjectPromptSet, SegmentationError, SegmenterConfig, SegmenterRegistry};
use crate::tracking::{PropagationRequest, TrackControl, TrackerConfig, TrackerRegistry, TrackingError};
use crate::video::{open_video, ContainerKind, VideoError, VideoSource};

pub const SCHEMA_VERSION: u32 = 1;
pub const METADATA_FILE: &str = "session.json";
pub const DEFAULT_MAX_FRAMES: u32 = 100;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("invalid session configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Range(String),
    #[error("{0}")]
    Seed(String),
    #[error("{0}")]
    State(String),
    #[error("session not found: {0}")]
    NotFound(String),
    #[error("cannot read session: {0}")]
    Load(String),
    #[error("cannot write {path}: {reason}")]
    Write { path: String, reason: String },
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Tracking(#[from] TrackingError),
}

impl SessionError {
    pub fn code(&self) -> ErrorCode {
        match self {
            SessionError::Config(_) => ErrorCode::ConfigError,
            SessionError::Range(_) => ErrorCode::RangeError,
            SessionError::Seed(_) => ErrorCode::SeedError,
            SessionError::State(_) => ErrorCode::StateError,
            SessionError::NotFound(_) => ErrorCode::NotFound,
            SessionError::Load(_) => ErrorCode::LoadError,
            SessionError::Write { .. } => ErrorCode::WriteError,
            SessionError::Video(e) => e.code(),
            SessionError::Mask(e) => e.code(),
            SessionError::Segmentation(e) => e.code(),
            SessionError::Tracking(e) => e.code(),
        }
    }
}

fn write_err(path: &Path, e: impl ToString) -> SessionError {
    SessionError::Write { path: path.display().to_string(), reason: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelClass {
    pub class_id: u32,
    pub name: String,
}

impl LabelClass {
    /// Classes numbered from 0 in the given order.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Vec<LabelClass> {
        names
            .iter()
            .enumerate()
            .map(|(i, n)| LabelClass { class_id: i as u32, name: n.as_ref().to_string() })
            .collect()
    }
}

pub fn validate_classes(classes: &[LabelClass]) -> Result<(), SessionError> {
    if classes.is_empty() {
        return Err(SessionError::Config("at least one class is required".into()));
    }
    let mut names = BTreeSet::new();
    for (i, c) in classes.iter().enumerate() {
        if c.class_id != i as u32 {
            return Err(SessionError::Config(format!(
                "class ids must be contiguous from 0; found {} at position {i}",
                c.class_id
            )));
        }
        if c.name.trim().is_empty() || c.name.contains(['\n', '\r']) {
            return Err(SessionError::Config(format!("invalid name for class {i}")));
        }
        if !names.insert(c.name.as_str()) {
            return Err(SessionError::Config(format!("duplicate class name `{}`", c.name)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentStatus {
    Pending,
    Tracked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: u32,
    /// Exclusive.
    pub end: u32,
    pub seed_frame: u32,
    pub status: SegmentStatus,
    /// Objects declared by the seed, including any without pixels.
    pub objects: Vec<u16>,
    pub stride: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracker: Option<TrackerConfig>,
    /// Correction frames in the order they were applied.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub corrections: Vec<u32>,
}

impl Segment {
    pub fn contains(&self, frame: u32) -> bool {
        (self.start..self.end).contains(&frame)
    }

    pub fn len(&self) -> u32 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Frames on the stride grid anchored at the seed, ascending.
    pub fn grid(&self, stride: u32) -> Vec<u32> {
        let stride = stride.max(1);
        let first = self.seed_frame - (self.seed_frame - self.start) / stride * stride;
        (first..self.end).step_by(stride as usize).collect()
    }

    /// Frames that hold a mask once tracked.
    pub fn frames(&self) -> Vec<u32> {
        self.grid(self.stride)
    }

    fn object_ids(&self) -> impl Iterator<Item = ObjectId> + '_ {
        self.objects.iter().filter_map(|&k| ObjectId::new(k))
    }
}

/// Integer map keys inside an internally tagged enum; serde cannot parse
/// them from buffered content on its own.
mod numeric_keys {
    use std::collections::BTreeMap;

    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<u16, u32>, s: S) -> Result<S::Ok, S::Error> {
        map.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u16, u32>, D::Error> {
        BTreeMap::<String, u32>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| k.parse().map(|k| (k, v)).map_err(|_| D::Error::custom(format!("invalid object id `{k}`"))))
            .collect()
    }
}

/// Append-only log entry. Replaying the log against the same backends
/// reproduces the session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum SessionEvent {
    Prompt {
        frame: u32,
        segmenter: SegmenterConfig,
        prompts: Vec<ObjectPromptSet>,
        #[serde(with = "numeric_keys")]
        assignments: BTreeMap<u16, u32>,
    },
    Track {
        seed_frame: u32,
        tracker: TrackerConfig,
        stride: u32,
        max_frames: u32,
    },
    Reseed {
        frame: u32,
        segmenter: SegmenterConfig,
        prompts: Vec<ObjectPromptSet>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceInfo {
    /// Relative to the session directory.
    pub path: String,
    pub kind: ContainerKind,
    pub width: u32,
    pub height: u32,
    pub frame_count: u32,
    pub fps: f64,
}

/// Everything in `session.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub schema: u32,
    pub session_id: String,
    pub name: String,
    pub source: SourceInfo,
    pub classes: Vec<LabelClass>,
    pub object_classes: BTreeMap<u16, u32>,
    pub next_object_id: u16,
    pub segments: Vec<Segment>,
    pub history: Vec<SessionEvent>,
}

#[derive(Debug, Clone, Default)]
pub struct CreateOptions {
    /// Fixed id; a random UUID otherwise.
    pub session_id: Option<String>,
    /// Dataset stem; defaults to the video's file stem.
    pub name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackOptions {
    pub stride: u32,
    pub max_frames: u32,
}

impl Default for TrackOptions {
    fn default() -> Self {
        TrackOptions { stride: 1, max_frames: DEFAULT_MAX_FRAMES }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackOutcome {
    pub segment: Segment,
    pub processed_frames: u32,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionOutcome {
    pub segment: Segment,
    /// Frames whose masks were rewritten, ascending.
    pub rewritten: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub frame_count: u32,
    pub segments: usize,
    pub pending_segments: usize,
    pub tracked_segments: usize,
    pub tracked_frames: usize,
    /// Registered objects per class id.
    pub objects: BTreeMap<u32, usize>,
}

/// Backend registries used by session operations.
#[derive(Debug, Default)]
pub struct Engines {
    pub segmenters: SegmenterRegistry,
    pub trackers: TrackerRegistry,
}

impl Engines {
    pub fn with_defaults() -> Self {
        Engines {
            segmenters: SegmenterRegistry::with_defaults(),
            trackers: TrackerRegistry::with_defaults(),
        }
    }
}

#[derive(Debug)]
pub struct Session {
    dir: PathBuf,
    state: SessionState,
    video: VideoSource,
}

fn frame_file(dir: &Path, sub: &str, frame: u32) -> PathBuf {
    dir.join(sub).join(format!("{frame:06}.png"))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), SessionError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| write_err(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| write_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| write_err(path, e))
}

fn remove_file(path: &Path) -> Result<(), SessionError> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(write_err(path, e)),
        _ => Ok(()),
    }
}

fn copy_source(src: &VideoSource, dir: &Path) -> Result<String, SessionError> {
    match src.kind {
        ContainerKind::Gif => {
            let dest = dir.join("source.gif");
            fs::copy(&src.locator, &dest).map_err(|e| write_err(&dest, e))?;
            Ok("source.gif".into())
        }
        ContainerKind::ImageSequence => {
            let dest = dir.join("source");
            fs::create_dir_all(&dest).map_err(|e| write_err(&dest, e))?;
            let entries = fs::read_dir(&src.locator).map_err(|e| write_err(&dest, e))?;
            for entry in entries {
                let path = entry.map_err(|e| write_err(&dest, e))?.path();
                if path.is_file() {
                    let target = dest.join(path.file_name().expect("file has a name"));
                    fs::copy(&path, &target).map_err(|e| write_err(&target, e))?;
                }
            }
            Ok("source".into())
        }
    }
}

impl Session {
    /// Creates `<root>/<session_id>` holding a copy of the video.
    pub fn create(
        root: impl AsRef<Path>,
        video: impl AsRef<Path>,
        classes: Vec<LabelClass>,
        options: CreateOptions,
    ) -> Result<Session, SessionError> {
        validate_classes(&classes)?;
        let src = open_video(video.as_ref())?;
        let session_id = options
            .session_id
            .unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
        if session_id.is_empty() || !session_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(SessionError::Config(format!("invalid session id `{session_id}`")));
        }
        let dir = root.as_ref().join(&session_id);
        if dir.exists() {
            return Err(SessionError::Config(format!("session `{session_id}` already exists")));
        }
        fs::create_dir_all(&dir).map_err(|e| write_err(&dir, e))?;
        let name = options.name.unwrap_or_else(|| {
            src.locator
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "frame".into())
        });
        let path = copy_source(&src, &dir)?;
        let video = open_video(dir.join(&path))?;
        let state = SessionState {
            schema: SCHEMA_VERSION,
            session_id,
            name,
            source: SourceInfo {
                path,
                kind: video.kind,
                width: video.width,
                height: video.height,
                frame_count: video.frame_count,
                fps: video.fps,
            },
            classes,
            object_classes: BTreeMap::new(),
            next_object_id: 1,
            segments: Vec::new(),
            history: Vec::new(),
        };
        let session = Session { dir, state, video };
        session.save()?;
        Ok(session)
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Session, SessionError> {
        let dir = dir.as_ref().to_path_buf();
        let meta = dir.join(METADATA_FILE);
        if !meta.is_file() {
            return Err(SessionError::NotFound(dir.display().to_string()));
        }
        let bytes = fs::read(&meta).map_err(|e| SessionError::Load(format!("{}: {e}", meta.display())))?;
        let state: SessionState =
            serde_json::from_slice(&bytes).map_err(|e| SessionError::Load(format!("{}: {e}", meta.display())))?;
        if state.schema != SCHEMA_VERSION {
            return Err(SessionError::Load(format!("unsupported schema {}", state.schema)));
        }
        let video = open_video(dir.join(&state.source.path))?;
        Ok(Session { dir, state, video })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn id(&self) -> &str {
        &self.state.session_id
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn video(&self) -> &VideoSource {
        &self.video
    }

    pub fn classes(&self) -> &[LabelClass] {
        &self.state.classes
    }

    pub fn segments(&self) -> &[Segment] {
        &self.state.segments
    }

    pub fn history(&self) -> &[SessionEvent] {
        &self.state.history
    }

    pub fn class_of(&self, id: ObjectId) -> Option<u32> {
        self.state.object_classes.get(&id.get()).copied()
    }

    pub fn segment_at(&self, frame: u32) -> Option<&Segment> {
        self.state.segments.iter().find(|s| s.contains(frame))
    }

    fn save(&self) -> Result<(), SessionError> {
        let mut json = serde_json::to_string_pretty(&self.state).expect("state is serializable");
        json.push('\n');
        write_bytes(&self.dir.join(METADATA_FILE), json.as_bytes())
    }

    fn read_mask(&self, sub: &str, frame: u32, seg: &Segment) -> Result<MaskMap, SessionError> {
        let path = frame_file(&self.dir, sub, frame);
        let bytes = fs::read(&path).map_err(|e| SessionError::Load(format!("{}: {e}", path.display())))?;
        Ok(MaskMap::decode_png(&bytes, seg.object_ids())?)
    }

    fn write_mask(&self, sub: &str, frame: u32, mask: &MaskMap) -> Result<(), SessionError> {
        write_bytes(&frame_file(&self.dir, sub, frame), &mask.encode_png()?)
    }

    /// Seed mask of the segment containing `frame`.
    pub fn seed(&self, frame: u32) -> Result<Option<MaskMap>, SessionError> {
        match self.segment_at(frame) {
            Some(seg) if seg.seed_frame == frame => Ok(Some(self.read_mask("seeds", frame, seg)?)),
            _ => Ok(None),
        }
    }

    /// Tracked mask for `frame`, if any.
    pub fn mask(&self, frame: u32) -> Result<Option<MaskMap>, SessionError> {
        match self.segment_at(frame) {
            Some(seg) if seg.status == SegmentStatus::Tracked && seg.frames().contains(&frame) => {
                Ok(Some(self.read_mask("masks", frame, seg)?))
            }
            _ => Ok(None),
        }
    }

    /// Every tracked mask keyed by frame.
    pub fn masks(&self) -> Result<BTreeMap<u32, MaskMap>, SessionError> {
        let mut out = BTreeMap::new();
        for seg in self.state.segments.iter().filter(|s| s.status == SegmentStatus::Tracked) {
            for f in seg.frames() {
                out.insert(f, self.read_mask("masks", f, seg)?);
            }
        }
        Ok(out)
    }

    /// Raw bytes of every persisted file below the session directory, keyed
    /// by relative path.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Vec<u8>>, SessionError> {
        fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) -> std::io::Result<()> {
            for entry in fs::read_dir(dir)? {
                let path = entry?.path();
                if path.is_dir() {
                    walk(base, &path, out)?;
                } else {
                    let rel = path.strip_prefix(base).expect("below base");
                    let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                    out.insert(key, fs::read(&path)?);
                }
            }
            Ok(())
        }
        let mut out = BTreeMap::new();
        walk(&self.dir, &self.dir, &mut out).map_err(|e| SessionError::Load(e.to_string()))?;
        Ok(out)
    }

    /// Registers a new object under `class_id` and returns its id.
    pub fn allocate_object(&mut self, class_id: u32) -> Result<ObjectId, SessionError> {
        self.check_class(class_id)?;
        let id = ObjectId::new(self.state.next_object_id)
            .ok_or_else(|| SessionError::Config("object ids exhausted".into()))?;
        self.state.object_classes.insert(id.get(), class_id);
        self.state.next_object_id = self
            .state
            .next_object_id
            .checked_add(1)
            .ok_or_else(|| SessionError::Config("object ids exhausted".into()))?;
        self.save()?;
        Ok(id)
    }

    fn check_class(&self, class_id: u32) -> Result<(), SessionError> {
        if (class_id as usize) < self.state.classes.len() {
            Ok(())
        } else {
            Err(SessionError::Config(format!("unknown class {class_id}")))
        }
    }

    fn check_frame(&self, frame: u32) -> Result<(), SessionError> {
        if frame < self.video.frame_count {
            Ok(())
        } else {
            Err(SessionError::Range(format!(
                "frame {frame} outside video of {} frames",
                self.video.frame_count
            )))
        }
    }

    fn predict(
        &self,
        engines: &Engines,
        segmenter: &SegmenterConfig,
        frame: u32,
        prompts: &[ObjectPromptSet],
    ) -> Result<MaskMap, SessionError> {
        let mut handle = engines.segmenters.init(segmenter)?;
        handle.set_image(&self.video.frame(frame)?)?;
        Ok(handle.predict_mask(prompts)?)
    }

    /// Segments `frame` from prompts and stores the result as the seed of
    /// the segment starting there. Prompted objects replace their previous
    /// seed pixels; other objects of an existing seed on this frame stay.
    pub fn prompt_frame(
        &mut self,
        engines: &Engines,
        segmenter: &SegmenterConfig,
        frame: u32,
        prompts: &[ObjectPromptSet],
        assignments: &BTreeMap<ObjectId, u32>,
    ) -> Result<MaskMap, SessionError> {
        self.check_frame(frame)?;
        for &class_id in assignments.values() {
            self.check_class(class_id)?;
        }
        for set in prompts {
            if !assignments.contains_key(&set.object_id) && self.class_of(set.object_id).is_none() {
                return Err(SessionError::Config(format!("object {} has no class", set.object_id)));
            }
        }
        let predicted = self.predict(engines, segmenter, frame, prompts)?;

        for (&id, &class_id) in assignments {
            self.state.object_classes.insert(id.get(), class_id);
            if id.get() >= self.state.next_object_id {
                self.state.next_object_id = id.get().saturating_add(1);
            }
        }

        let previous = match self.segment_at(frame) {
            Some(seg) if seg.seed_frame == frame => Some(self.read_mask("seeds", frame, seg)?),
            _ => None,
        };
        self.open_segment_at(frame)?;
        let prompted: BTreeSet<ObjectId> = prompts.iter().map(|p| p.object_id).collect();
        let seed = merge_objects(previous, &predicted, &prompted);
        self.write_mask("seeds", frame, &seed)?;
        let seg = self
            .state
            .segments
            .iter_mut()
            .find(|s| s.seed_frame == frame)
            .expect("segment just opened");
        seg.objects = seed.object_ids().iter().map(|id| id.get()).collect();

        self.state.history.push(SessionEvent::Prompt {
            frame,
            segmenter: segmenter.clone(),
            prompts: prompts.to_vec(),
            assignments: assignments.iter().map(|(k, v)| (k.get(), *v)).collect(),
        });
        self.save()?;
        Ok(seed)
    }

    /// Makes `frame` the seed of a pending segment: resets a tracked segment
    /// containing it and splits segments so that it starts one.
    fn open_segment_at(&mut self, frame: u32) -> Result<(), SessionError> {
        let frame_count = self.video.frame_count;
        let Some(i) = self.state.segments.iter().position(|s| s.contains(frame)) else {
            let end = self
                .state
                .segments
                .iter()
                .map(|s| s.start)
                .filter(|&s| s > frame)
                .min()
                .unwrap_or(frame_count);
            let seg = Segment {
                start: frame,
                end,
                seed_frame: frame,
                status: SegmentStatus::Pending,
                objects: Vec::new(),
                stride: 1,
                tracker: None,
                corrections: Vec::new(),
            };
            let at = self.state.segments.partition_point(|s| s.start < frame);
            self.state.segments.insert(at, seg);
            return Ok(());
        };
        self.reset_segment(i)?;
        let old = self.state.segments[i].clone();
        if old.seed_frame == frame {
            return Ok(());
        }
        let fresh = |start: u32, end: u32, seed: &Segment| Segment {
            start,
            end,
            seed_frame: seed.seed_frame,
            status: SegmentStatus::Pending,
            objects: seed.objects.clone(),
            stride: 1,
            tracker: None,
            corrections: Vec::new(),
        };
        let new_seed = Segment { seed_frame: frame, objects: Vec::new(), ..old.clone() };
        let replacement = if old.seed_frame < frame {
            vec![fresh(old.start, frame, &old), fresh(frame, old.end, &new_seed)]
        } else {
            // Frames before the new seed lose their segment.
            vec![fresh(frame, old.seed_frame, &new_seed), fresh(old.seed_frame, old.end, &old)]
        };
        self.state.segments.splice(i..=i, replacement);
        Ok(())
    }

    /// Drops tracked output and corrections of segment `i`.
    fn reset_segment(&mut self, i: usize) -> Result<(), SessionError> {
        let seg = &self.state.segments[i];
        if seg.status == SegmentStatus::Tracked {
            for f in seg.frames() {
                remove_file(&frame_file(&self.dir, "masks", f))?;
            }
        }
        for &k in &seg.corrections {
            remove_file(&frame_file(&self.dir, "keyframes", k))?;
        }
        let seg = &mut self.state.segments[i];
        seg.status = SegmentStatus::Pending;
        seg.tracker = None;
        seg.stride = 1;
        seg.corrections.clear();
        Ok(())
    }

    pub fn pending_segments(&self) -> Vec<Segment> {
        self.state
            .segments
            .iter()
            .filter(|s| s.status == SegmentStatus::Pending)
            .cloned()
            .collect()
    }

    /// Propagates the seed of the segment containing `frame` over the
    /// segment. At most `max_frames` grid frames are processed; the segment
    /// then shrinks to the processed window, which starts as close to the
    /// seed as the limit allows. Nothing is written if tracking fails or is
    /// cancelled.
    pub fn track_segment(
        &mut self,
        engines: &Engines,
        frame: u32,
        tracker: &TrackerConfig,
        options: TrackOptions,
        ctl: &TrackControl,
    ) -> Result<TrackOutcome, SessionError> {
        if options.stride == 0 {
            return Err(SessionError::Config("stride must be at least 1".into()));
        }
        if options.max_frames == 0 {
            return Err(SessionError::Config("max_frames must be at least 1".into()));
        }
        let i = self
            .state
            .segments
            .iter()
            .position(|s| s.contains(frame))
            .ok_or_else(|| SessionError::Seed(format!("no seeded segment contains frame {frame}")))?;
        let seg = self.state.segments[i].clone();
        let grid = seg.grid(options.stride);
        let seed_pos = grid.iter().position(|&f| f == seg.seed_frame).expect("grid contains its anchor");
        let limit = options.max_frames as usize;
        let truncated = grid.len() > limit;
        let window_start = if truncated { seed_pos.min(grid.len() - limit) } else { 0 };
        let window = &grid[window_start..grid.len().min(window_start + limit)];

        let seed_mask = self.read_mask("seeds", seg.seed_frame, &seg)?;
        let mut handle = engines.trackers.init(tracker)?;
        let request = PropagationRequest {
            frames: self.video.frames_at(window)?,
            seed_index: seed_pos - window_start,
            seed_mask,
        };
        let masks = handle.propagate(&request, ctl)?;
        ctl.checkpoint()?;

        self.reset_segment(i)?;
        for (&f, m) in window.iter().zip(&masks) {
            self.write_mask("masks", f, m)?;
        }
        let updated = {
            let s = &mut self.state.segments[i];
            if truncated {
                s.start = window[0];
                s.end = window[window.len() - 1] + 1;
            }
            s.status = SegmentStatus::Tracked;
            s.stride = options.stride;
            s.tracker = Some(tracker.clone());
            s.clone()
        };
        self.state.history.push(SessionEvent::Track {
            seed_frame: seg.seed_frame,
            tracker: tracker.clone(),
            stride: options.stride,
            max_frames: options.max_frames,
        });
        self.save()?;
        Ok(TrackOutcome { segment: updated, processed_frames: window.len() as u32, truncated })
    }

    /// Re-segments a tracked frame, reseeds the segment's tracker there and
    /// rewrites the masks from that frame to the end of the segment.
    /// Objects without prompts keep their current mask on that frame.
    pub fn correct_and_resume(
        &mut self,
        engines: &Engines,
        segmenter: &SegmenterConfig,
        frame: u32,
        prompts: &[ObjectPromptSet],
        ctl: &TrackControl,
    ) -> Result<CorrectionOutcome, SessionError> {
        self.check_frame(frame)?;
        let i = self
            .state
            .segments
            .iter()
            .position(|s| s.status == SegmentStatus::Tracked && s.contains(frame))
            .ok_or_else(|| SessionError::Range(format!("frame {frame} is not inside a tracked segment")))?;
        let seg = self.state.segments[i].clone();
        let grid = seg.frames();
        let pos = grid
            .iter()
            .position(|&f| f == frame)
            .ok_or_else(|| SessionError::Range(format!("frame {frame} is not on the segment's stride grid")))?;
        for set in prompts {
            if self.class_of(set.object_id).is_none() {
                return Err(SessionError::Config(format!("object {} has no class", set.object_id)));
            }
        }
        let tracker_cfg = seg
            .tracker
            .clone()
            .ok_or_else(|| SessionError::State("tracked segment without tracker".into()))?;
        let mut handle = engines.trackers.init(&tracker_cfg)?;
        if !handle.descriptor().supports_reseed {
            return Err(TrackingError::Capability {
                backend: handle.descriptor().name.clone(),
                capability: "reseed",
            }
            .into());
        }

        let predicted = self.predict(engines, segmenter, frame, prompts)?;
        let prompted: BTreeSet<ObjectId> = prompts.iter().map(|p| p.object_id).collect();
        let current = self.read_mask("masks", frame, &seg)?;
        let keyframe = merge_objects(Some(current), &predicted, &prompted);

        // Rebuild the tracker state this segment was left in.
        let seed_pos = grid.iter().position(|&f| f == seg.seed_frame).expect("grid contains its anchor");
        let request = PropagationRequest {
            frames: self.video.frames_at(&grid)?,
            seed_index: seed_pos,
            seed_mask: self.read_mask("seeds", seg.seed_frame, &seg)?,
        };
        handle.propagate(&request, ctl)?;
        for &k in seg.corrections.iter().filter(|&&k| k != frame) {
            let p = grid.iter().position(|&f| f == k).expect("corrections lie on the grid");
            handle.reseed(p, &self.read_mask("keyframes", k, &seg)?, ctl)?;
        }
        handle.reseed(pos, &keyframe, ctl)?;
        let masks = handle.current_masks()?;
        ctl.checkpoint()?;

        let rewritten: Vec<u32> = grid[pos..].to_vec();
        for (&f, m) in grid.iter().zip(&masks).skip(pos) {
            self.write_mask("masks", f, m)?;
        }
        self.write_mask("keyframes", frame, &keyframe)?;
        let updated = {
            let s = &mut self.state.segments[i];
            s.corrections.retain(|&k| k != frame);
            s.corrections.push(frame);
            let mut objects: BTreeSet<u16> = s.objects.iter().copied().collect();
            objects.extend(keyframe.object_ids().iter().map(|id| id.get()));
            s.objects = objects.into_iter().collect();
            s.clone()
        };
        self.state.history.push(SessionEvent::Reseed {
            frame,
            segmenter: segmenter.clone(),
            prompts: prompts.to_vec(),
        });
        self.save()?;
        Ok(CorrectionOutcome { segment: updated, rewritten })
    }

    pub fn summary(&self) -> SessionSummary {
        let mut objects: BTreeMap<u32, usize> = self.state.classes.iter().map(|c| (c.class_id, 0)).collect();
        for &class_id in self.state.object_classes.values() {
            *objects.entry(class_id).or_default() += 1;
        }
        let tracked: Vec<&Segment> = self
            .state
            .segments
            .iter()
            .filter(|s| s.status == SegmentStatus::Tracked)
            .collect();
        SessionSummary {
            session_id: self.state.session_id.clone(),
            frame_count: self.video.frame_count,
            segments: self.state.segments.len(),
            pending_segments: self.state.segments.len() - tracked.len(),
            tracked_segments: tracked.len(),
            tracked_frames: tracked.iter().map(|s| s.frames().len()).sum(),
            objects,
        }
    }

    /// Re-executes the event history in a fresh session under `root` with
    /// the same id, name, classes and video.
    pub fn replay(&self, engines: &Engines, root: impl AsRef<Path>) -> Result<Session, SessionError> {
        let mut copy = Session::create(
            root,
            self.dir.join(&self.state.source.path),
            self.state.classes.clone(),
            CreateOptions {
                session_id: Some(self.state.session_id.clone()),
                name: Some(self.state.name.clone()),
            },
        )?;
        let ctl = TrackControl::new();
        for event in &self.state.history {
            match event {
                SessionEvent::Prompt { frame, segmenter, prompts, assignments } => {
                    let assignments = assignments
                        .iter()
                        .filter_map(|(&k, &v)| ObjectId::new(k).map(|id| (id, v)))
                        .collect();
                    copy.prompt_frame(engines, segmenter, *frame, prompts, &assignments)?;
                }
                SessionEvent::Track { seed_frame, tracker, stride, max_frames } => {
                    let options = TrackOptions { stride: *stride, max_frames: *max_frames };
                    copy.track_segment(engines, *seed_frame, tracker, options, &ctl)?;
                }
                SessionEvent::Reseed { frame, segmenter, prompts } => {
                    copy.correct_and_resume(engines, segmenter, *frame, prompts, &ctl)?;
                }
            }
        }
        Ok(copy)
    }
}

/// `base` with every object in `replace` taken from `update` instead.
fn merge_objects(base: Option<MaskMap>, update: &MaskMap, replace: &BTreeSet<ObjectId>) -> MaskMap {
    let Some(mut out) = base else {
        return update.clone();
    };
    let mut keep = out.object_ids().clone();
    keep.retain(|id| !replace.contains(id));
    out.retain_objects(&keep);
    for &id in replace {
        out.paint(id, &update.object_bitmap(id));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::SquareFixture;
    use crate::mask::{mask_iou, PixelBox};
    use crate::segmentation::PointPrompt;

    fn oid(k: u16) -> ObjectId {
        ObjectId::new(k).unwrap()
    }

    struct Setup {
        _tmp: tempfile::TempDir,
        root: PathBuf,
        video: PathBuf,
        fx: SquareFixture,
        engines: Engines,
    }

    fn setup(fx: SquareFixture) -> Setup {
        let tmp = tempfile::tempdir().unwrap();
        let video = tmp.path().join("square.gif");
        fx.write(&video).unwrap();
        let root = tmp.path().join("sessions");
        Setup { _tmp: tmp, root, video, fx, engines: Engines::with_defaults() }
    }

    fn create(s: &Setup) -> Session {
        Session::create(&s.root, &s.video, LabelClass::from_names(&["square"]), CreateOptions::default()).unwrap()
    }

    fn click(s: &Setup, t: u32) -> Vec<ObjectPromptSet> {
        let (x, y) = s.fx.center(t);
        vec![ObjectPromptSet::points(oid(1), vec![PointPrompt::positive(x, y)])]
    }

    fn assign() -> BTreeMap<ObjectId, u32> {
        BTreeMap::from([(oid(1), 0)])
    }

    fn region_grow() -> SegmenterConfig {
        SegmenterConfig::named("region-grow")
    }

    fn baseline() -> TrackerConfig {
        TrackerConfig::named("baseline-ncc")
    }

    #[test]
    fn class_validation() {
        let s = setup(SquareFixture::default());
        let create = |c: Vec<LabelClass>| Session::create(&s.root, &s.video, c, CreateOptions::default());
        assert_eq!(create(vec![]).unwrap_err().code(), ErrorCode::ConfigError);
        let dup = LabelClass::from_names(&["a", "a"]);
        assert_eq!(create(dup).unwrap_err().code(), ErrorCode::ConfigError);
        let session = create(LabelClass::from_names(&["person"])).unwrap();
        assert_eq!(session.classes(), &[LabelClass { class_id: 0, name: "person".into() }]);
        let reopened = Session::open(session.dir()).unwrap();
        assert_eq!(reopened.state(), session.state());
    }

    #[test]
    fn fresh_summary_is_zero() {
        let s = setup(SquareFixture::default());
        let summary = create(&s).summary();
        assert_eq!(summary.segments, 0);
        assert_eq!(summary.tracked_frames, 0);
        assert_eq!(summary.objects, BTreeMap::from([(0, 0)]));
    }

    #[test]
    fn prompt_stores_seed_and_creates_segment() {
        let s = setup(SquareFixture::default());
        let mut session = create(&s);
        let seed = session.prompt_frame(&s.engines, &region_grow(), 0, &click(&s, 0), &assign()).unwrap();
        assert_eq!(seed, s.fx.ground_truth(0, oid(1)));
        assert_eq!(session.segments().len(), 1);
        assert_eq!((session.segments()[0].start, session.segments()[0].end), (0, 32));
        assert_eq!(session.seed(0).unwrap().unwrap(), seed);

        let err = session
            .prompt_frame(&s.engines, &region_grow(), 0, &click(&s, 0), &BTreeMap::from([(oid(1), 7)]))
            .unwrap_err();
        assert_eq!(err.code(), ErrorCode::ConfigError);
        let err = session
            .prompt_frame(&s.engines, &region_grow(), 0, &click(&s, 0), &BTreeMap::new())
            .map(|_| ());
        assert!(err.is_ok(), "known objects need no assignment");
        assert_eq!(session.history().len(), 2);
    }

    #[test]
    fn track_then_summary() {
        let s = setup(SquareFixture::default());
        let mut session = create(&s);
        session.prompt_frame(&s.engines, &region_grow(), 0, &click(&s, 0), &assign()).unwrap();
        let ctl = TrackControl::new();
        let out = session
            .track_segment(&s.engines, 0, &baseline(), TrackOptions::default(), &ctl)
            .unwrap();
        assert_eq!(out.processed_frames, 32);
        assert!(!out.truncated);
        let masks = session.masks().unwrap();
        assert_eq!(masks.len(), 32);
        for (t, m) in &masks {
            let iou: f64 = mask_iou(m, &s.fx.ground_truth(*t, oid(1)), oid(1)).unwrap();
            assert!(iou >= 0.99, "frame {t}: {iou}");
        }
        let summary = session.summary();
        assert_eq!(summary.tracked_frames, 32);
        assert_eq!(summary.objects, BTreeMap::from([(0, 1)]));

        session.track_segment(&s.engines, 5, &baseline(), TrackOptions::default(), &ctl).unwrap();
        assert_eq!(session.masks().unwrap(), masks);
        assert_eq!(
            session.history().iter().filter(|e| matches!(e, SessionEvent::Track { .. })).count(),
            2
        );
    }

    #[test]
    fn track_without_seed() {
        let s = setup(SquareFixture::default());
        let mut session = create(&s);
        let err = session
            .track_segment(&s.engines, 3, &baseline(), TrackOptions::default(), &TrackControl::new())
            .unwrap_err();
        assert_eq!(err.code(), ErrorCode::SeedError);
    }

    #[test]
    fn truncation_window_starts_at_seed() {
        let s = setup(SquareFixture::default());
        let mut session = create(&s);
        session.prompt_frame(&s.engines, &region_grow(), 4, &click(&s, 4), &assign()).unwrap();
        let options = TrackOptions { stride: 1, max_frames: 10 };
        let out = session
            .track_segment(&s.engines, 4, &baseline(), options, &TrackControl::new())
            .unwrap();
        assert!(out.truncated);
        assert_eq!(out.processed_frames, 10);
        assert_eq!((out.segment.start, out.segment.end), (4, 14));
        assert_eq!(session.summary().tracked_frames, 10);
    }

    #[test]
    fn stride_grid_is_anchored_at_seed() {
        let seg = Segment {
            start: 2,
            end: 20,
            seed_frame: 7,
            status: SegmentStatus::Pending,
            objects: vec![],
            stride: 1,
            tracker: None,
            corrections: vec![],
        };
        assert_eq!(seg.grid(5), vec![2, 7, 12, 17]);
        assert_eq!(seg.grid(4), vec![3, 7, 11, 15, 19]);
        assert_eq!(seg.grid(1).len(), 18);
    }

    #[test]
    fn cancellation_writes_nothing() {
        let s = setup(SquareFixture::default());
        let mut session = create(&s);
        session.prompt_frame(&s.engines, &region_grow(), 0, &click(&s, 0), &assign()).unwrap();
        let before = session.snapshot().unwrap();
        let ctl = TrackControl::new();
        ctl.cancel();
        let err = session
            .track_segment(&s.engines, 0, &baseline(), TrackOptions::default(), &ctl)
            .unwrap_err();
        assert_eq!(err.code(), ErrorCode::Cancelled);
        assert_eq!(session.snapshot().unwrap(), before);
        assert_eq!(session.segments()[0].status, SegmentStatus::Pending);
    }

    #[test]
    fn prompt_inside_tracked_segment_resets_and_splits() {
        let s = setup(SquareFixture::default());
        let mut session = create(&s);
        session.prompt_frame(&s.engines, &region_grow(), 0, &click(&s, 0), &assign()).unwrap();
        session
            .track_segment(&s.engines, 0, &baseline(), TrackOptions::default(), &TrackControl::new())
            .unwrap();
        session.prompt_frame(&s.engines, &region_grow(), 16, &click(&s, 16), &assign()).unwrap();
        let segs = session.segments();
        assert_eq!(segs.len(), 2);
        assert_eq!((segs[0].start, segs[0].end, segs[0].seed_frame), (0, 16, 0));
        assert_eq!((segs[1].start, segs[1].end, segs[1].seed_frame), (16, 32, 16));
        assert!(segs.iter().all(|s| s.status == SegmentStatus::Pending));
        assert!(session.masks().unwrap().is_empty());
        assert!(!session.dir().join("masks/000003.png").exists());
    }

    #[test]
    fn disjoint_segments_summary() {
        let s = setup(SquareFixture::default());
        let mut session = create(&s);
        let options = TrackOptions { stride: 1, max_frames: 10 };
        for start in [0, 20] {
            session
                .prompt_frame(&s.engines, &region_grow(), start, &click(&s, start), &assign())
                .unwrap();
            session
                .track_segment(&s.engines, start, &TrackerConfig::named("hold"), options, &TrackControl::new())
                .unwrap();
        }
        let spans: Vec<_> = session.segments().iter().map(|s| (s.start, s.end)).collect();
        assert_eq!(spans, vec![(0, 10), (20, 30)]);
        assert_eq!(session.summary().tracked_frames, 20);
    }

    #[test]
    fn correction_rewrites_only_later_frames() {
        let s = setup(SquareFixture::default());
        let mut session = create(&s);
        // Drift: the mock segmenter paints the box verbatim, 3 px off target.
        let (x, y) = s.fx.position(0);
        let (x, y) = (x as u32 + 3, y as u32);
        let off = PixelBox::new(x, y, x + 20, y + 20, 128, 128).unwrap();
        let drifted = vec![ObjectPromptSet::boxes(oid(1), vec![off])];
        session
            .prompt_frame(&s.engines, &SegmenterConfig::named("mock"), 0, &drifted, &assign())
            .unwrap();
        let ctl = TrackControl::new();
        session.track_segment(&s.engines, 0, &baseline(), TrackOptions::default(), &ctl).unwrap();
        let before = session.masks().unwrap();
        let k = 12;
        let out = session
            .correct_and_resume(&s.engines, &region_grow(), k, &click(&s, k), &ctl)
            .unwrap();
        assert_eq!(out.rewritten, (k..32).collect::<Vec<_>>());
        let after = session.masks().unwrap();
        for t in 0..k {
            assert_eq!(after[&t], before[&t]);
        }
        for t in k..32 {
            let iou: f64 = mask_iou(&after[&t], &s.fx.ground_truth(t, oid(1)), oid(1)).unwrap();
            assert_eq!(iou, 1.0, "frame {t}");
        }

        let replayed = session.replay(&s.engines, s.root.join("replay")).unwrap();
        assert_eq!(replayed.snapshot().unwrap(), session.snapshot().unwrap());
    }

    #[test]
    fn correction_at_last_frame_changes_only_it() {
        let s = setup(SquareFixture::default());
        let mut session = create(&s);
        session.prompt_frame(&s.engines, &region_grow(), 0, &click(&s, 0), &assign()).unwrap();
        let ctl = TrackControl::new();
        session.track_segment(&s.engines, 0, &baseline(), TrackOptions::default(), &ctl).unwrap();
        let out = session.correct_and_resume(&s.engines, &region_grow(), 31, &click(&s, 31), &ctl).unwrap();
        assert_eq!(out.rewritten, vec![31]);
    }

    #[test]
    fn correction_errors() {
        let s = setup(SquareFixture::default());
        let mut session = create(&s);
        let ctl = TrackControl::new();
        let err = session.correct_and_resume(&s.engines, &region_grow(), 3, &click(&s, 3), &ctl).unwrap_err();
        assert_eq!(err.code(), ErrorCode::RangeError);
        session.prompt_frame(&s.engines, &region_grow(), 0, &click(&s, 0), &assign()).unwrap();
        session
            .track_segment(&s.engines, 0, &TrackerConfig::named("hold"), TrackOptions::default(), &ctl)
            .unwrap();
        let err = session.correct_and_resume(&s.engines, &region_grow(), 3, &click(&s, 3), &ctl).unwrap_err();
        assert_eq!(err.code(), ErrorCode::CapabilityError);
    }

    #[test]
    fn fixed_ids_give_identical_directories() {
        let s = setup(SquareFixture::default());
        let run = |root: &Path| {
            let options = CreateOptions { session_id: Some("fixed".into()), name: None };
            let mut session =
                Session::create(root, &s.video, LabelClass::from_names(&["square"]), options).unwrap();
            session.prompt_frame(&s.engines, &region_grow(), 0, &click(&s, 0), &assign()).unwrap();
            session
                .track_segment(&s.engines, 0, &baseline(), TrackOptions::default(), &TrackControl::new())
                .unwrap();
            session.snapshot().unwrap()
        };
        assert_eq!(run(&s.root.join("a")), run(&s.root.join("b")));
    }
}
