//! Synthetic test video: a colored square moving over a uniform background.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::mask::{MaskMap, ObjectId};
use crate::video::{self, VideoError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareFixture {
    pub width: u32,
    pub height: u32,
    pub frames: u32,
    /// Side length of the square in pixels.
    pub size: u32,
    /// Top-left corner at frame 0; may lie partly outside the image.
    pub origin: (i32, i32),
    /// Displacement per frame.
    pub velocity: (i32, i32),
    pub color: [u8; 3],
    pub background: [u8; 3],
    pub fps: f64,
}

impl Default for SquareFixture {
    fn default() -> Self {
        SquareFixture {
            width: 128,
            height: 128,
            frames: 32,
            size: 20,
            origin: (10, 10),
            velocity: (2, 1),
            color: [220, 40, 40],
            background: [30, 30, 30],
            fps: 25.0,
        }
    }
}

impl SquareFixture {
    /// Top-left corner of the square at frame `t`.
    pub fn position(&self, t: u32) -> (i32, i32) {
        (
            self.origin.0 + self.velocity.0 * t as i32,
            self.origin.1 + self.velocity.1 * t as i32,
        )
    }

    fn covers(&self, t: u32, x: u32, y: u32) -> bool {
        let (px, py) = self.position(t);
        let (x, y, s) = (x as i64, y as i64, self.size as i64);
        x >= px as i64 && x < px as i64 + s && y >= py as i64 && y < py as i64 + s
    }

    /// Whether the square lies entirely inside the image at frame `t`.
    pub fn fully_visible(&self, t: u32) -> bool {
        let (px, py) = self.position(t);
        px >= 0
            && py >= 0
            && px as i64 + self.size as i64 <= self.width as i64
            && py as i64 + self.size as i64 <= self.height as i64
    }

    pub fn frame(&self, t: u32) -> RgbImage {
        RgbImage::from_fn(self.width, self.height, |x, y| {
            Rgb(if self.covers(t, x, y) {
                self.color
            } else {
                self.background
            })
        })
    }

    /// Analytic mask of the square at frame `t`, clipped to the image.
    pub fn ground_truth(&self, t: u32, id: ObjectId) -> MaskMap {
        let mut m = MaskMap::new(self.width, self.height);
        m.declare(id);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.covers(t, x, y) {
                    m.set(x, y, Some(id));
                }
            }
        }
        m
    }

    /// A pixel inside the square at frame `t`.
    pub fn center(&self, t: u32) -> (u32, u32) {
        let (px, py) = self.position(t);
        let half = self.size as i32 / 2;
        (
            (px + half).clamp(0, self.width as i32 - 1) as u32,
            (py + half).clamp(0, self.height as i32 - 1) as u32,
        )
    }

    /// Writes a GIF when `locator` ends in `.gif`, otherwise a PNG sequence.
    pub fn write(&self, locator: impl AsRef<Path>) -> Result<(), VideoError> {
        let locator = locator.as_ref();
        let frames: Vec<RgbImage> = (0..self.frames).map(|t| self.frame(t)).collect();
        let is_gif = locator
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("gif"));
        if is_gif {
            video::write_gif(frames.iter(), self.fps, locator)
        } else {
            video::write_sequence(frames.iter(), self.fps, locator)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_square_stays_inside() {
        let fx = SquareFixture::default();
        assert!((0..fx.frames).all(|t| fx.fully_visible(t)));
        let id = ObjectId::new(1).unwrap();
        assert_eq!(fx.ground_truth(31, id).pixel_count(id), 400);
        assert_eq!(fx.position(31), (72, 41));
    }

    #[test]
    fn clipped_square() {
        let fx = SquareFixture {
            origin: (120, 0),
            ..SquareFixture::default()
        };
        let id = ObjectId::new(1).unwrap();
        assert!(!fx.fully_visible(0));
        assert_eq!(fx.ground_truth(0, id).pixel_count(id), 8 * 20);
    }
}
