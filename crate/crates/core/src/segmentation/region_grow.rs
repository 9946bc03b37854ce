//! Deterministic reference segmenter.
//!
//! * positive point: 4-connected flood fill over pixels whose RGB distance
//!   from the seed pixel is at most `tolerance`;
//! * box without points: the largest connected same-color component inside
//!   the box (first in raster order on ties);
//! * points and boxes together: the boxes restrict the fill domain;
//! * negative point: its connected component is removed from the selection.

use std::collections::VecDeque;

use image::RgbImage;

use super::{ObjectPromptSet, Polarity, PromptKind, SegmentationError, Segmenter, SegmenterConfig, SegmenterDescriptor};
use crate::mask::{MaskMap, PixelBox};
use crate::video::Frame;

pub struct RegionGrow {
    descriptor: SegmenterDescriptor,
    tolerance: u32,
    image: Option<RgbImage>,
}

impl RegionGrow {
    pub const NAME: &'static str = "region-grow";

    pub fn descriptor_static() -> SegmenterDescriptor {
        SegmenterDescriptor::new(Self::NAME, &[PromptKind::Box, PromptKind::Point, PromptKind::Both])
    }

    pub fn new(tolerance: u32) -> Self {
        RegionGrow { descriptor: Self::descriptor_static(), tolerance, image: None }
    }

    /// Reads the optional `tolerance` parameter (default 0, exact match).
    pub fn from_config(config: &SegmenterConfig) -> Result<Self, SegmentationError> {
        Ok(Self::new(config.parse_param("tolerance", 0u32)?))
    }

    #[cfg(test)]
    pub(crate) fn set_descriptor(&mut self, descriptor: SegmenterDescriptor) {
        self.descriptor = descriptor;
    }

    fn segment_object(&self, img: &RgbImage, set: &ObjectPromptSet) -> Vec<bool> {
        let (w, h) = img.dimensions();
        let n = w as usize * h as usize;
        let domain = (!set.boxes.is_empty()).then(|| {
            let mut d = vec![false; n];
            for b in &set.boxes {
                for y in b.0.y0..b.0.y1 {
                    let row = y as usize * w as usize;
                    d[row + b.0.x0 as usize..row + b.0.x1 as usize].fill(true);
                }
            }
            d
        });
        let domain = domain.as_deref();

        let mut selected = vec![false; n];
        let positives: Vec<_> = set.points.iter().filter(|p| p.polarity == Polarity::Positive).collect();
        if !positives.is_empty() {
            for p in positives {
                let fill = flood_fill(img, (p.x, p.y), self.tolerance, domain);
                or_into(&mut selected, &fill);
            }
        } else {
            for b in &set.boxes {
                let comp = largest_component(img, &b.0, self.tolerance);
                or_into(&mut selected, &comp);
            }
        }
        for p in set.points.iter().filter(|p| p.polarity == Polarity::Negative) {
            let fill = flood_fill(img, (p.x, p.y), self.tolerance, domain);
            for (s, f) in selected.iter_mut().zip(&fill) {
                if *f {
                    *s = false;
                }
            }
        }
        selected
    }
}

impl Segmenter for RegionGrow {
    fn descriptor(&self) -> &SegmenterDescriptor {
        &self.descriptor
    }

    fn set_image(&mut self, frame: &Frame) -> Result<(), SegmentationError> {
        self.image = Some(frame.pixels.clone());
        Ok(())
    }

    fn predict_mask(&mut self, prompts: &[ObjectPromptSet]) -> Result<MaskMap, SegmentationError> {
        let img = self.image.as_ref().ok_or(SegmentationError::NoImage)?;
        let (w, h) = img.dimensions();
        let layers = prompts.iter().map(|set| (set.object_id, self.segment_object(img, set)));
        let mut mask = MaskMap::composite(w, h, layers);
        for set in prompts {
            mask.declare(set.object_id);
        }
        Ok(mask)
    }
}

fn or_into(acc: &mut [bool], other: &[bool]) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a |= *b;
    }
}

#[inline]
fn color_close(a: &[u8; 3], b: &[u8; 3], tolerance: u32) -> bool {
    let d2: u32 = a
        .iter()
        .zip(b)
        .map(|(&p, &q)| {
            let d = p.abs_diff(q) as u32;
            d * d
        })
        .sum();
    d2 <= tolerance * tolerance
}

/// 4-connected flood fill from `seed` over pixels within `tolerance` (RGB
/// Euclidean distance) of the seed color, optionally confined to `domain`.
/// A seed outside the domain selects nothing.
pub fn flood_fill(img: &RgbImage, seed: (u32, u32), tolerance: u32, domain: Option<&[bool]>) -> Vec<bool> {
    let (w, h) = img.dimensions();
    let idx = |x: u32, y: u32| y as usize * w as usize + x as usize;
    let mut out = vec![false; w as usize * h as usize];
    let allowed = |i: usize| domain.is_none_or(|d| d[i]);
    if seed.0 >= w || seed.1 >= h || !allowed(idx(seed.0, seed.1)) {
        return out;
    }
    let reference = img.get_pixel(seed.0, seed.1).0;
    let mut queue = VecDeque::from([seed]);
    out[idx(seed.0, seed.1)] = true;
    while let Some((x, y)) = queue.pop_front() {
        let neighbors = [
            (x > 0).then(|| (x - 1, y)),
            (x + 1 < w).then(|| (x + 1, y)),
            (y > 0).then(|| (x, y - 1)),
            (y + 1 < h).then(|| (x, y + 1)),
        ];
        for (nx, ny) in neighbors.into_iter().flatten() {
            let i = idx(nx, ny);
            if !out[i] && allowed(i) && color_close(&img.get_pixel(nx, ny).0, &reference, tolerance) {
                out[i] = true;
                queue.push_back((nx, ny));
            }
        }
    }
    out
}

/// Largest connected component inside `bbox`; ties keep the component met
/// first in raster order.
fn largest_component(img: &RgbImage, bbox: &PixelBox, tolerance: u32) -> Vec<bool> {
    let (w, h) = img.dimensions();
    let n = w as usize * h as usize;
    let mut domain = vec![false; n];
    for y in bbox.y0..bbox.y1 {
        let row = y as usize * w as usize;
        domain[row + bbox.x0 as usize..row + bbox.x1 as usize].fill(true);
    }
    let mut visited = vec![false; n];
    let mut best: Option<(usize, Vec<bool>)> = None;
    for y in bbox.y0..bbox.y1 {
        for x in bbox.x0..bbox.x1 {
            let i = y as usize * w as usize + x as usize;
            if visited[i] {
                continue;
            }
            let comp = flood_fill(img, (x, y), tolerance, Some(&domain));
            let size = comp.iter().filter(|&&b| b).count();
            or_into(&mut visited, &comp);
            if best.as_ref().is_none_or(|(s, _)| size > *s) {
                best = Some((size, comp));
            }
        }
    }
    best.map(|(_, c)| c).unwrap_or_else(|| vec![false; n])
}
