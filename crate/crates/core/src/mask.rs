//! Label maps and the geometry built on them: tight boxes, YOLO
//! normalization, IoU and overlay rendering.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Cursor;

use image::{ImageBuffer, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::ErrorCode;
use crate::scalar::{format_fixed6, Scalar};
use crate::video::Frame;

/// Tolerance used by every YOLO bound check.
pub const YOLO_EPSILON_NUM: i64 = 1;
pub const YOLO_EPSILON_DEN: i64 = 1_000_000_000;
/// Extra room for the extent checks: one unit in the last serialized
/// decimal, enough to absorb rounding of center and size together.
pub const YOLO_SERIAL_SLACK_DEN: i64 = 1_000_000;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MaskError {
    #[error("object {0} has no pixels in the mask")]
    EmptyObject(ObjectId),
    #[error("value out of range: {0}")]
    Range(String),
    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    Shape {
        left_w: u32,
        left_h: u32,
        right_w: u32,
        right_h: u32,
    },
    #[error("invalid box {0:?} for a {1}x{2} image")]
    InvalidBox([u32; 4], u32, u32),
    #[error("label {0} is not a declared object")]
    UndeclaredLabel(u16),
    #[error("label image: {0}")]
    Codec(String),
}

impl MaskError {
    pub fn code(&self) -> ErrorCode {
        match self {
            MaskError::EmptyObject(_) => ErrorCode::EmptyObject,
            MaskError::Range(_) | MaskError::InvalidBox(..) => ErrorCode::RangeError,
            MaskError::Shape { .. } => ErrorCode::ShapeError,
            MaskError::UndeclaredLabel(_) => ErrorCode::ShapeError,
            MaskError::Codec(_) => ErrorCode::LoadError,
        }
    }
}

fn shape_error(a: (u32, u32), b: (u32, u32)) -> MaskError {
    MaskError::Shape {
        left_w: a.0,
        left_h: a.1,
        right_w: b.0,
        right_h: b.1,
    }
}

/// Positive object identifier; 0 is reserved for background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub struct ObjectId(u16);

impl ObjectId {
    pub fn new(id: u16) -> Option<Self> {
        (id > 0).then_some(ObjectId(id))
    }

    pub fn get(self) -> u16 {
        self.0
    }
}

impl TryFrom<u16> for ObjectId {
    type Error = String;

    fn try_from(value: u16) -> Result<Self, Self::Error> {
        ObjectId::new(value).ok_or_else(|| "object id must be positive".to_string())
    }
}

impl From<ObjectId> for u16 {
    fn from(id: ObjectId) -> u16 {
        id.0
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Per-frame label image: 0 is background, `k` is object `k`.
///
/// `object_ids` may name objects that currently have no pixels (an object
/// that was requested but not found, or lost by a tracker).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMap {
    width: u32,
    height: u32,
    labels: Vec<u16>,
    object_ids: BTreeSet<ObjectId>,
}

impl MaskMap {
    pub fn new(width: u32, height: u32) -> Self {
        MaskMap {
            width,
            height,
            labels: vec![0; width as usize * height as usize],
            object_ids: BTreeSet::new(),
        }
    }

    /// Builds a map from raw labels. Every nonzero label is declared; `extra`
    /// declares objects without pixels.
    pub fn from_labels(
        width: u32,
        height: u32,
        labels: Vec<u16>,
        extra: impl IntoIterator<Item = ObjectId>,
    ) -> Result<Self, MaskError> {
        if labels.len() != width as usize * height as usize {
            return Err(MaskError::Range(format!(
                "{} labels for a {width}x{height} map",
                labels.len()
            )));
        }
        let mut object_ids: BTreeSet<ObjectId> = extra.into_iter().collect();
        object_ids.extend(labels.iter().filter_map(|&l| ObjectId::new(l)));
        Ok(MaskMap {
            width,
            height,
            labels,
            object_ids,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn object_ids(&self) -> &BTreeSet<ObjectId> {
        &self.object_ids
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    /// Writes a label, declaring the object if needed.
    #[inline]
    pub fn set(&mut self, x: u32, y: u32, id: Option<ObjectId>) {
        let label = id.map_or(0, ObjectId::get);
        if let Some(id) = id {
            self.object_ids.insert(id);
        }
        self.labels[y as usize * self.width as usize + x as usize] = label;
    }

    pub fn declare(&mut self, id: ObjectId) {
        self.object_ids.insert(id);
    }

    pub fn pixel_count(&self, id: ObjectId) -> usize {
        self.labels.iter().filter(|&&l| l == id.get()).count()
    }

    /// Declared objects that own at least one pixel.
    pub fn visible_objects(&self) -> BTreeSet<ObjectId> {
        self.labels.iter().filter_map(|&l| ObjectId::new(l)).collect()
    }

    /// Row-major boolean view of one object.
    pub fn object_bitmap(&self, id: ObjectId) -> Vec<bool> {
        self.labels.iter().map(|&l| l == id.get()).collect()
    }

    /// Paints `bitmap` as object `id` on top of the current labels.
    pub fn paint(&mut self, id: ObjectId, bitmap: &[bool]) {
        debug_assert_eq!(bitmap.len(), self.labels.len());
        self.object_ids.insert(id);
        for (label, &on) in self.labels.iter_mut().zip(bitmap) {
            if on {
                *label = id.get();
            }
        }
    }

    /// Composites per-object bitmaps; higher ids win where they overlap.
    pub fn composite(
        width: u32,
        height: u32,
        layers: impl IntoIterator<Item = (ObjectId, Vec<bool>)>,
    ) -> Self {
        let mut layers: Vec<_> = layers.into_iter().collect();
        layers.sort_by_key(|(id, _)| *id);
        let mut out = MaskMap::new(width, height);
        for (id, bitmap) in &layers {
            out.paint(*id, bitmap);
        }
        out
    }

    /// Keeps only the listed objects; everything else becomes background.
    pub fn retain_objects(&mut self, keep: &BTreeSet<ObjectId>) {
        for label in &mut self.labels {
            if let Some(id) = ObjectId::new(*label) {
                if !keep.contains(&id) {
                    *label = 0;
                }
            }
        }
        self.object_ids.retain(|id| keep.contains(id));
    }

    /// 16-bit grayscale PNG of the label values.
    pub fn encode_png(&self) -> Result<Vec<u8>, MaskError> {
        let img: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width, self.height, self.labels.clone())
                .ok_or_else(|| MaskError::Codec("buffer size".into()))?;
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| MaskError::Codec(e.to_string()))?;
        Ok(out.into_inner())
    }

    pub fn decode_png(
        bytes: &[u8],
        extra: impl IntoIterator<Item = ObjectId>,
    ) -> Result<Self, MaskError> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| MaskError::Codec(e.to_string()))?
            .into_luma16();
        let (w, h) = img.dimensions();
        MaskMap::from_labels(w, h, img.into_raw(), extra)
    }

    /// Row-major run lengths of one object's bitmap, starting with a
    /// (possibly zero-length) background run.
    pub fn run_lengths(&self, id: ObjectId) -> Vec<u32> {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &l in &self.labels {
            let on = l == id.get();
            if on != current {
                counts.push(run);
                run = 0;
                current = on;
            }
            run += 1;
        }
        counts.push(run);
        counts
    }
}

/// Half-open pixel box `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelBox {
    /// Checked constructor against an image of `width` x `height`.
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32, width: u32, height: u32) -> Result<Self, MaskError> {
        let b = PixelBox { x0, y0, x1, y1 };
        b.validate(width, height)?;
        Ok(b)
    }

    pub fn validate(&self, width: u32, height: u32) -> Result<(), MaskError> {
        if self.x0 < self.x1 && self.x1 <= width && self.y0 < self.y1 && self.y1 <= height {
            Ok(())
        } else {
            Err(MaskError::InvalidBox(
                [self.x0, self.y0, self.x1, self.y1],
                width,
                height,
            ))
        }
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    #[inline]
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// Normalized YOLO box: center and size as fractions of the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YoloBox<T> {
    pub class_id: u32,
    pub cx: T,
    pub cy: T,
    pub w: T,
    pub h: T,
}

impl<T: Scalar> YoloBox<T> {
    /// `class_id cx cy w h` with six decimals and single spaces, no newline.
    pub fn to_line(&self) -> String {
        format!(
            "{} {} {} {} {}",
            self.class_id,
            format_fixed6(self.cx),
            format_fixed6(self.cy),
            format_fixed6(self.w),
            format_fixed6(self.h)
        )
    }

    /// Parses one label line. Bounds are not checked here.
    pub fn parse_line(line: &str) -> Option<Self> {
        let mut fields = line.split(' ');
        let class_id = fields.next()?;
        if class_id.is_empty() || !class_id.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let class_id = class_id.parse().ok()?;
        let mut values = [T::zero(); 4];
        for v in &mut values {
            *v = T::parse_decimal(fields.next()?)?;
        }
        if fields.next().is_some() {
            return None;
        }
        let [cx, cy, w, h] = values;
        Some(YoloBox {
            class_id,
            cx,
            cy,
            w,
            h,
        })
    }

    /// Checks the normalized-box invariants with tolerance 1e-9; the extent
    /// checks also allow the rounding of a six-decimal label line.
    pub fn check_bounds(&self) -> Result<(), MaskError> {
        let eps = T::from_ratio(YOLO_EPSILON_NUM, YOLO_EPSILON_DEN);
        let extent_eps = eps + T::from_ratio(1, YOLO_SERIAL_SLACK_DEN);
        let zero = T::zero();
        let one = T::one();
        let two = T::from_int(2);
        for (name, v) in [("cx", self.cx), ("cy", self.cy), ("w", self.w), ("h", self.h)] {
            if !(v > zero && v <= one + eps) {
                return Err(MaskError::Range(format!("{name}={v:?} outside (0, 1]")));
            }
        }
        for (c, s, axis) in [(self.cx, self.w, "x"), (self.cy, self.h, "y")] {
            let half = s / two;
            if c - half < zero - extent_eps || c + half > one + extent_eps {
                return Err(MaskError::Range(format!("{axis} extent leaves the image")));
            }
        }
        Ok(())
    }
}

/// Tightest half-open box around every pixel of `object_id`.
pub fn mask_to_bbox(mask: &MaskMap, object_id: ObjectId) -> Result<PixelBox, MaskError> {
    let mut x0 = u32::MAX;
    let mut y0 = u32::MAX;
    let mut x1 = 0;
    let mut y1 = 0;
    let w = mask.width as usize;
    for (i, &l) in mask.labels.iter().enumerate() {
        if l == object_id.get() {
            let x = (i % w) as u32;
            let y = (i / w) as u32;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
        }
    }
    if x0 == u32::MAX {
        return Err(MaskError::EmptyObject(object_id));
    }
    Ok(PixelBox { x0, y0, x1, y1 })
}

pub fn bbox_to_yolo<T: Scalar>(
    bbox: &PixelBox,
    width: u32,
    height: u32,
    class_id: u32,
) -> Result<YoloBox<T>, MaskError> {
    bbox.validate(width, height)?;
    let (w, h) = (width as i64, height as i64);
    Ok(YoloBox {
        class_id,
        cx: T::from_ratio(bbox.x0 as i64 + bbox.x1 as i64, 2 * w),
        cy: T::from_ratio(bbox.y0 as i64 + bbox.y1 as i64, 2 * h),
        w: T::from_ratio(bbox.x1 as i64 - bbox.x0 as i64, w),
        h: T::from_ratio(bbox.y1 as i64 - bbox.y0 as i64, h),
    })
}

/// Nearest-integer inverse of [`bbox_to_yolo`].
pub fn yolo_to_bbox<T: Scalar>(y: &YoloBox<T>, width: u32, height: u32) -> Result<PixelBox, MaskError> {
    y.check_bounds()?;
    let two = T::from_int(2);
    let (wf, hf) = (T::from_int(width as i64), T::from_int(height as i64));
    let edge = |c: T, s: T, scale: T, max: u32| -> (i64, i64) {
        let half = s / two;
        let lo = ((c - half) * scale).round_half_up().clamp(0, max as i64);
        let hi = ((c + half) * scale).round_half_up().clamp(0, max as i64);
        (lo, hi)
    };
    let (x0, x1) = edge(y.cx, y.w, wf, width);
    let (y0, y1) = edge(y.cy, y.h, hf, height);
    PixelBox::new(x0 as u32, y0 as u32, x1 as u32, y1 as u32, width, height)
}

/// Intersection over union of one object's pixel sets; 1 when both are empty.
pub fn mask_iou<T: Scalar>(a: &MaskMap, b: &MaskMap, object_id: ObjectId) -> Result<T, MaskError> {
    if a.dimensions() != b.dimensions() {
        return Err(shape_error(a.dimensions(), b.dimensions()));
    }
    let id = object_id.get();
    let (mut inter, mut union) = (0i64, 0i64);
    for (&la, &lb) in a.labels.iter().zip(&b.labels) {
        let (ia, ib) = (la == id, lb == id);
        inter += (ia && ib) as i64;
        union += (ia || ib) as i64;
    }
    if union == 0 {
        return Ok(T::one());
    }
    Ok(T::from_ratio(inter, union))
}

/// Deterministic color for an object: hue `k * 47 mod 360` at full
/// saturation and value.
pub fn palette_color(id: ObjectId) -> Rgb<u8> {
    let hue = (id.get() as u32 * 47) % 360;
    let sector = hue / 60;
    let rem = hue % 60;
    let rise = ((255 * rem + 30) / 60) as u8;
    let fall = 255 - rise;
    Rgb(match sector {
        0 => [255, rise, 0],
        1 => [fall, 255, 0],
        2 => [0, 255, rise],
        3 => [0, fall, 255],
        4 => [rise, 0, 255],
        _ => [255, 0, fall],
    })
}

/// Blends one channel toward `target`, rounding ties down.
pub fn blend_channel<T: Scalar>(src: u8, target: u8, alpha: T) -> u8 {
    let v = T::from_int(src as i64) * (T::one() - alpha) + T::from_int(target as i64) * alpha;
    v.round_half_down().clamp(0, 255) as u8
}

/// Frame with object pixels blended toward their palette colors.
pub fn render_overlay<T: Scalar>(frame: &Frame, mask: &MaskMap, alpha: T) -> Result<Frame, MaskError> {
    let dims = frame.pixels.dimensions();
    if dims != mask.dimensions() {
        return Err(shape_error(dims, mask.dimensions()));
    }
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return Err(MaskError::Range(format!("alpha {alpha:?} outside [0, 1]")));
    }
    let mut pixels: RgbImage = frame.pixels.clone();
    for (label, px) in mask.labels.iter().zip(pixels.pixels_mut()) {
        if let Some(id) = ObjectId::new(*label) {
            let color = palette_color(id);
            for c in 0..3 {
                px.0[c] = blend_channel(px.0[c], color.0[c], alpha);
            }
        }
    }
    Ok(Frame {
        index: frame.index,
        timestamp: frame.timestamp,
        pixels,
    })
}
