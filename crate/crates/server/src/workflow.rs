//! Operations shared by the HTTP routes and the CLI. Both front ends only
//! translate their inputs into these calls.

use std::collections::BTreeMap;
use std::io::Cursor;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use trackmark_core::mask::{mask_to_bbox, render_overlay};
use trackmark_core::segmentation::{ObjectPromptSet, PointPrompt, Polarity, SegmenterConfig};
use trackmark_core::session::CorrectionOutcome;
use trackmark_core::tracking::TrackControl;
use trackmark_core::{Engines, ErrorCode, MaskMap, ObjectId, PixelBox, Rational, Session};

use crate::error::{ApiError, ApiResult};

pub const OVERLAY_ALPHA: (i64, i64) = (1, 2);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSpec<C> {
    pub x: C,
    pub y: C,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polarity: Option<Polarity>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec<C> {
    pub x0: C,
    pub y0: C,
    pub x1: C,
    pub y1: C,
}

/// Prompts for one object. A missing `object_id` allocates the next free
/// id; `class_id` is required for objects the session does not know yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec<C> {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_id: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_id: Option<u32>,
    #[serde(default = "Vec::new")]
    pub points: Vec<PointSpec<C>>,
    #[serde(default = "Vec::new")]
    pub boxes: Vec<BoxSpec<C>>,
}

pub type PixelObject = ObjectSpec<u32>;
/// Coordinates as fractions of the frame size.
pub type NormalizedObject = ObjectSpec<f64>;

fn to_pixel(v: f64, size: u32, what: &str) -> ApiResult<f64> {
    if !(0.0..=1.0).contains(&v) {
        return Err(ApiError::new(ErrorCode::PromptError, format!("{what}={v} outside [0, 1]")));
    }
    Ok(v * size as f64)
}

impl NormalizedObject {
    /// Points land on the pixel containing them; box edges snap to the
    /// nearest pixel boundary.
    pub fn to_pixels(&self, width: u32, height: u32) -> ApiResult<PixelObject> {
        let point = |p: &PointSpec<f64>| -> ApiResult<PointSpec<u32>> {
            let x = to_pixel(p.x, width, "x")?.floor().min(width as f64 - 1.0) as u32;
            let y = to_pixel(p.y, height, "y")?.floor().min(height as f64 - 1.0) as u32;
            Ok(PointSpec { x, y, polarity: p.polarity })
        };
        let bx = |b: &BoxSpec<f64>| -> ApiResult<BoxSpec<u32>> {
            Ok(BoxSpec {
                x0: to_pixel(b.x0, width, "x0")?.round() as u32,
                y0: to_pixel(b.y0, height, "y0")?.round() as u32,
                x1: to_pixel(b.x1, width, "x1")?.round() as u32,
                y1: to_pixel(b.y1, height, "y1")?.round() as u32,
            })
        };
        Ok(ObjectSpec {
            object_id: self.object_id,
            class_id: self.class_id,
            points: self.points.iter().map(point).collect::<ApiResult<_>>()?,
            boxes: self.boxes.iter().map(bx).collect::<ApiResult<_>>()?,
        })
    }
}

pub fn normalize_all(objects: &[NormalizedObject], width: u32, height: u32) -> ApiResult<Vec<PixelObject>> {
    objects.iter().map(|o| o.to_pixels(width, height)).collect()
}

/// Resolves object ids and builds backend prompts plus class assignments.
pub fn resolve_prompts(
    session: &Session,
    objects: &[PixelObject],
) -> ApiResult<(Vec<ObjectPromptSet>, BTreeMap<ObjectId, u32>)> {
    if objects.is_empty() {
        return Err(ApiError::new(ErrorCode::PromptError, "no objects in request"));
    }
    let (w, h) = (session.video().width, session.video().height);
    let mut next = session.state().next_object_id;
    let mut sets = Vec::new();
    let mut assignments = BTreeMap::new();
    for o in objects {
        let id = match o.object_id {
            Some(raw) => ObjectId::new(raw).ok_or_else(|| ApiError::bad_request("object ids start at 1"))?,
            None => {
                let id = ObjectId::new(next).ok_or_else(|| ApiError::new(ErrorCode::ConfigError, "object ids exhausted"))?;
                next = next.saturating_add(1);
                id
            }
        };
        if let Some(c) = o.class_id {
            assignments.insert(id, c);
        }
        let points = o
            .points
            .iter()
            .map(|p| PointPrompt { x: p.x, y: p.y, polarity: p.polarity.unwrap_or(Polarity::Positive) })
            .collect();
        let boxes = o
            .boxes
            .iter()
            .map(|b| PixelBox::new(b.x0, b.y0, b.x1, b.y1, w, h))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ApiError::new(ErrorCode::PromptError, e.to_string()))?;
        let mut set = ObjectPromptSet::boxes(id, boxes);
        set.points = points;
        sets.push(set);
    }
    Ok((sets, assignments))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectPreview {
    pub object_id: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_id: Option<u32>,
    pub pixel_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<PixelBox>,
    /// Row-major run lengths, alternating background/object, starting with
    /// background.
    pub rle: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPreview {
    pub frame: u32,
    pub width: u32,
    pub height: u32,
    /// 16-bit label PNG, base64.
    pub mask_png: String,
    /// Frame with the objects blended in, PNG, base64.
    pub overlay_png: String,
    pub objects: Vec<ObjectPreview>,
}

pub fn preview(session: &Session, frame: u32, mask: &MaskMap) -> ApiResult<MaskPreview> {
    let pixels = session.video().frame(frame)?;
    let alpha = Rational::new(OVERLAY_ALPHA.0, OVERLAY_ALPHA.1);
    let overlay = render_overlay(&pixels, mask, alpha)?;
    let mut png = Cursor::new(Vec::new());
    overlay
        .pixels
        .write_to(&mut png, image::ImageFormat::Png)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let objects = mask
        .object_ids()
        .iter()
        .map(|&id| ObjectPreview {
            object_id: id.get(),
            class_id: session.class_of(id),
            pixel_count: mask.pixel_count(id),
            bbox: mask_to_bbox(mask, id).ok(),
            rle: mask.run_lengths(id),
        })
        .collect();
    Ok(MaskPreview {
        frame,
        width: mask.width(),
        height: mask.height(),
        mask_png: B64.encode(mask.encode_png()?),
        overlay_png: B64.encode(png.into_inner()),
        objects,
    })
}

pub fn prompt(
    session: &mut Session,
    engines: &Engines,
    segmenter: &SegmenterConfig,
    frame: u32,
    objects: &[PixelObject],
) -> ApiResult<MaskPreview> {
    let (sets, assignments) = resolve_prompts(session, objects)?;
    let seed = session.prompt_frame(engines, segmenter, frame, &sets, &assignments)?;
    preview(session, frame, &seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionResult {
    #[serde(flatten)]
    pub outcome: CorrectionOutcome,
    pub preview: MaskPreview,
}

pub fn correct(
    session: &mut Session,
    engines: &Engines,
    segmenter: &SegmenterConfig,
    frame: u32,
    objects: &[PixelObject],
    ctl: &TrackControl,
) -> ApiResult<CorrectionResult> {
    let (sets, assignments) = resolve_prompts(session, objects)?;
    if let Some((id, _)) = assignments.iter().find(|(id, c)| session.class_of(**id) != Some(**c)) {
        return Err(ApiError::new(
            ErrorCode::ConfigError,
            format!("corrections cannot change the class of object {id}"),
        ));
    }
    let outcome = session.correct_and_resume(engines, segmenter, frame, &sets, ctl)?;
    let mask = session
        .mask(frame)?
        .ok_or_else(|| ApiError::internal("corrected frame has no mask"))?;
    Ok(CorrectionResult { outcome, preview: preview(session, frame, &mask)? })
}

/// Session ids double as directory names.
pub fn check_session_id(id: &str) -> ApiResult<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(ApiError::not_found(format!("no session `{id}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_points_hit_pixel_centres() {
        let o = NormalizedObject {
            object_id: None,
            class_id: Some(0),
            points: vec![PointSpec { x: 20.5 / 128.0, y: 1.0, polarity: None }],
            boxes: vec![BoxSpec { x0: 0.1, y0: 0.0, x1: 0.5, y1: 1.0 }],
        };
        let p = o.to_pixels(128, 64).unwrap();
        assert_eq!((p.points[0].x, p.points[0].y), (20, 63));
        assert_eq!((p.boxes[0].x0, p.boxes[0].x1, p.boxes[0].y1), (13, 64, 64));
        let bad = NormalizedObject { points: vec![PointSpec { x: 1.5, y: 0.0, polarity: None }], ..o };
        assert_eq!(bad.to_pixels(10, 10).unwrap_err().code, ErrorCode::PromptError);
    }

    #[test]
    fn session_ids_are_plain_names() {
        assert!(check_session_id("abc-1_2").is_ok());
        for bad in ["", "..", "../x", "a/b", ".hidden"] {
            assert_eq!(check_session_id(bad).unwrap_err().code, ErrorCode::NotFound);
        }
    }
}
