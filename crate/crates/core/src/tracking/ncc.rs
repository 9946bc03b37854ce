//! Correlation-template baseline tracker.
//!
//! Per object the seed mask's bounding box is cut out of the seed frame as
//! an RGB template. On each following frame the template is matched by
//! exhaustive normalized cross-correlation within `±search_radius` pixels of
//! the previous position and the seed shape is translated rigidly to the
//! best match. Scores below `loss_threshold` mark the object lost on that
//! frame; the search continues from the last known position.

use std::collections::{BTreeMap, BTreeSet};
use std::marker::PhantomData;

use image::RgbImage;
use num_traits::cast;

use super::{tracked_objects, PropagationRequest, TrackControl, Tracker, TrackerConfig, TrackerDescriptor, TrackingError};
use crate::mask::{mask_to_bbox, MaskMap, ObjectId};
use crate::scalar::FloatScalar;
use crate::video::Frame;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationTrackerConfig<T> {
    pub search_radius: u32,
    pub loss_threshold: T,
    /// Re-cut the template from each matched frame instead of keeping the
    /// seed template.
    pub refresh_template: bool,
}

impl<T: FloatScalar> Default for CorrelationTrackerConfig<T> {
    fn default() -> Self {
        CorrelationTrackerConfig {
            search_radius: 16,
            loss_threshold: cast(0.5).expect("representable"),
            refresh_template: false,
        }
    }
}

/// RGB patch with its precomputed squared norm.
#[derive(Debug, Clone)]
struct Patch<T> {
    width: u32,
    height: u32,
    data: Vec<[u8; 3]>,
    norm_sq: i64,
    _scalar: PhantomData<T>,
}

impl<T: FloatScalar> Patch<T> {
    fn cut(img: &RgbImage, x: u32, y: u32, width: u32, height: u32) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for dy in 0..height {
            for dx in 0..width {
                data.push(img.get_pixel(x + dx, y + dy).0);
            }
        }
        let norm_sq = data.iter().flat_map(|p| p.iter()).map(|&c| centered(c).pow(2)).sum();
        Patch { width, height, data, norm_sq, _scalar: PhantomData }
    }
}

/// Twice the intensity's offset from mid-grey: an odd integer, never zero.
#[inline]
fn centered(c: u8) -> i64 {
    2 * c as i64 - 255
}

/// Normalized cross-correlation of `template` against the window of `img`
/// whose top-left corner is `(x, y)`: cosine similarity of the RGB values
/// centered at mid-grey. Proportional windows score exactly 1.
pub fn ncc_score<T: FloatScalar>(img: &RgbImage, template: &RgbImage, x: u32, y: u32) -> T {
    let t = Patch::<T>::cut(template, 0, 0, template.width(), template.height());
    score_at(img, &t, x, y)
}

fn score_at<T: FloatScalar>(img: &RgbImage, t: &Patch<T>, x: u32, y: u32) -> T {
    let mut dot = 0i64;
    let mut norm_sq = 0i64;
    let mut i = 0;
    for dy in 0..t.height {
        for dx in 0..t.width {
            let p = img.get_pixel(x + dx, y + dy).0;
            let q = &t.data[i];
            i += 1;
            for c in 0..3 {
                let pv = centered(p[c]);
                dot += pv * centered(q[c]);
                norm_sq += pv * pv;
            }
        }
    }
    if norm_sq == 0 || t.norm_sq == 0 {
        return T::zero();
    }
    if dot > 0 && (dot as i128).pow(2) == norm_sq as i128 * t.norm_sq as i128 {
        return T::one();
    }
    let f = |v: i64| -> T { cast(v).expect("finite") };
    f(dot) / (f(norm_sq).sqrt() * f(t.norm_sq).sqrt())
}

/// Per-object tracking state.
struct ObjectTrack<T> {
    id: ObjectId,
    /// Object pixels relative to the template origin.
    shape: Vec<(u32, u32)>,
    template: Patch<T>,
    pos: (i64, i64),
}

pub struct CorrelationTracker<T: FloatScalar> {
    descriptor: TrackerDescriptor,
    config: CorrelationTrackerConfig<T>,
    frames: Vec<Frame>,
    keyframes: BTreeMap<usize, MaskMap>,
    outputs: Vec<MaskMap>,
    _scalar: PhantomData<T>,
}

impl<T: FloatScalar> CorrelationTracker<T> {
    pub const NAME: &'static str = "baseline-ncc";

    pub fn descriptor_static() -> TrackerDescriptor {
        TrackerDescriptor {
            name: Self::NAME.into(),
            supports_reseed: true,
            suggests_candidates: false,
        }
    }

    pub fn new(config: CorrelationTrackerConfig<T>) -> Self {
        CorrelationTracker {
            descriptor: Self::descriptor_static(),
            config,
            frames: Vec::new(),
            keyframes: BTreeMap::new(),
            outputs: Vec::new(),
            _scalar: PhantomData,
        }
    }

    /// Parameters: `search_radius` (16), `loss_threshold` (0.5),
    /// `refresh_template` (false).
    pub fn from_config(config: &TrackerConfig) -> Result<Self, TrackingError> {
        let defaults = CorrelationTrackerConfig::<T>::default();
        let threshold: f64 = config.parse_param("loss_threshold", 0.5)?;
        if !(-1.0..=1.0).contains(&threshold) {
            return Err(TrackingError::Config("loss_threshold must lie in [-1, 1]".into()));
        }
        Ok(Self::new(CorrelationTrackerConfig {
            search_radius: config.parse_param("search_radius", defaults.search_radius)?,
            loss_threshold: cast(threshold).expect("representable"),
            refresh_template: config.parse_param("refresh_template", defaults.refresh_template)?,
        }))
    }

    pub fn config(&self) -> &CorrelationTrackerConfig<T> {
        &self.config
    }

    fn start_tracks(&self, key: usize) -> Vec<ObjectTrack<T>> {
        let mask = &self.keyframes[&key];
        let img = &self.frames[key].pixels;
        mask.object_ids()
            .iter()
            .filter_map(|&id| {
                let b = mask_to_bbox(mask, id).ok()?;
                let mut shape = Vec::new();
                for y in b.y0..b.y1 {
                    for x in b.x0..b.x1 {
                        if mask.get(x, y) == id.get() {
                            shape.push((x - b.x0, y - b.y0));
                        }
                    }
                }
                Some(ObjectTrack {
                    id,
                    shape,
                    template: Patch::cut(img, b.x0, b.y0, b.width(), b.height()),
                    pos: (b.x0 as i64, b.y0 as i64),
                })
            })
            .collect()
    }

    /// Best template position near the previous one: highest score, then
    /// smallest displacement, then first in raster order.
    fn search(&self, img: &RgbImage, track: &ObjectTrack<T>) -> Option<((i64, i64), T)> {
        let (fw, fh) = (img.width() as i64, img.height() as i64);
        let (tw, th) = (track.template.width as i64, track.template.height as i64);
        let r = self.config.search_radius as i64;
        let (px, py) = track.pos;
        let xs = (px - r).max(0)..=(px + r).min(fw - tw);
        let ys = (py - r).max(0)..=(py + r).min(fh - th);
        let mut best: Option<((i64, i64), T, i64)> = None;
        for y in ys {
            for x in xs.clone() {
                let s = score_at(img, &track.template, x as u32, y as u32);
                let dist = (x - px).abs() + (y - py).abs();
                let better = match &best {
                    None => true,
                    Some((_, bs, bd)) => s > *bs || (s == *bs && dist < *bd),
                };
                if better {
                    best = Some(((x, y), s, dist));
                }
            }
        }
        best.map(|(p, s, _)| (p, s))
    }

    /// Propagates from keyframe `key` over `targets`, in order.
    fn sweep(
        &self,
        key: usize,
        targets: impl Iterator<Item = usize>,
        ctl: &TrackControl,
    ) -> Result<Vec<(usize, MaskMap)>, TrackingError> {
        let key_mask = &self.keyframes[&key];
        let (w, h) = key_mask.dimensions();
        let declared = key_mask.object_ids().clone();
        let mut tracks = self.start_tracks(key);
        let mut out = Vec::new();
        for t in targets {
            ctl.checkpoint()?;
            let img = &self.frames[t].pixels;
            let mut layers = Vec::with_capacity(tracks.len());
            for track in &mut tracks {
                let Some((pos, score)) = self.search(img, track) else {
                    continue;
                };
                if score < self.config.loss_threshold {
                    continue;
                }
                track.pos = pos;
                let mut bitmap = vec![false; w as usize * h as usize];
                for &(dx, dy) in &track.shape {
                    let (x, y) = (pos.0 + dx as i64, pos.1 + dy as i64);
                    if x >= 0 && y >= 0 && x < w as i64 && y < h as i64 {
                        bitmap[y as usize * w as usize + x as usize] = true;
                    }
                }
                layers.push((track.id, bitmap));
                if self.config.refresh_template {
                    let (tw, th) = (track.template.width, track.template.height);
                    track.template = Patch::cut(img, pos.0 as u32, pos.1 as u32, tw, th);
                }
            }
            let mut mask = MaskMap::composite(w, h, layers);
            for id in &declared {
                mask.declare(*id);
            }
            out.push((t, mask));
            ctl.advance();
        }
        Ok(out)
    }

    /// Recomputes frames `(from, until)` forward from keyframe `from`.
    fn forward_from(&mut self, from: usize, ctl: &TrackControl) -> Result<(), TrackingError> {
        let until = self
            .keyframes
            .range(from + 1..)
            .next()
            .map_or(self.frames.len(), |(&k, _)| k);
        let results = self.sweep(from, from + 1..until, ctl)?;
        for (t, m) in results {
            self.outputs[t] = m;
        }
        Ok(())
    }

    pub fn keyframe_indices(&self) -> Vec<usize> {
        self.keyframes.keys().copied().collect()
    }

    pub fn tracked_ids(&self) -> BTreeSet<ObjectId> {
        tracked_objects(self.keyframes.values())
    }
}

impl<T: FloatScalar> Tracker for CorrelationTracker<T> {
    fn descriptor(&self) -> &TrackerDescriptor {
        &self.descriptor
    }

    fn propagate(&mut self, req: &PropagationRequest, ctl: &TrackControl) -> Result<Vec<MaskMap>, TrackingError> {
        req.validate()?;
        let n = req.frames.len();
        let seed = req.seed_index;
        self.frames = req.frames.clone();
        self.keyframes = BTreeMap::from([(seed, req.seed_mask.clone())]);
        let mut outputs = vec![MaskMap::new(req.seed_mask.width(), req.seed_mask.height()); n];
        outputs[seed] = req.seed_mask.clone();
        ctl.start(n);
        ctl.advance();
        let forward = self.sweep(seed, seed + 1..n, ctl)?;
        let backward = self.sweep(seed, (0..seed).rev(), ctl)?;
        for (t, m) in forward.into_iter().chain(backward) {
            outputs[t] = m;
        }
        self.outputs = outputs;
        Ok(self.outputs.clone())
    }

    fn reseed(&mut self, frame_index: usize, mask: &MaskMap, ctl: &TrackControl) -> Result<(), TrackingError> {
        if self.frames.is_empty() {
            return Err(TrackingError::State("reseed before propagate".into()));
        }
        if frame_index >= self.frames.len() {
            return Err(TrackingError::Seed(format!("reseed index {frame_index} out of range")));
        }
        self.keyframes.insert(frame_index, mask.clone());
        self.outputs[frame_index] = mask.clone();
        let until = self
            .keyframes
            .range(frame_index + 1..)
            .next()
            .map_or(self.frames.len(), |(&k, _)| k);
        ctl.start(until - frame_index);
        ctl.advance();
        self.forward_from(frame_index, ctl)
    }

    fn current_masks(&mut self) -> Result<Vec<MaskMap>, TrackingError> {
        Ok(self.outputs.clone())
    }
}
