//! Video decoding into RGB frames and preview re-encoding.
//!
//! Two containers are understood: animated GIF files and directories of
//! still images (sorted lexicographically by file name). An image-sequence
//! directory may carry a `sequence.json` sidecar with its frame rate.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use image::codecs::gif::{GifDecoder, GifEncoder, Repeat};
use image::{AnimationDecoder, Delay, DynamicImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::ErrorCode;

/// Frame rate assumed for image sequences without a sidecar.
pub const DEFAULT_SEQUENCE_FPS: f64 = 30.0;
pub const SEQUENCE_SIDECAR: &str = "sequence.json";

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

#[derive(Debug, thiserror::Error)]
pub enum VideoError {
    #[error("cannot open {locator}: {reason}")]
    Open { locator: String, reason: String },
    #[error("{0} contains no frames")]
    EmptyVideo(String),
    #[error("frame range [{start}, {end}) with stride {stride} is invalid for {frame_count} frames")]
    Range {
        start: u32,
        end: u32,
        stride: u32,
        frame_count: u32,
    },
    #[error("cannot write {locator}: {reason}")]
    Write { locator: String, reason: String },
    #[error("frame {index} is {got:?}, expected {expected:?}")]
    Dimensions {
        index: u32,
        got: (u32, u32),
        expected: (u32, u32),
    },
}

impl VideoError {
    pub fn code(&self) -> ErrorCode {
        match self {
            VideoError::Open { .. } => ErrorCode::OpenError,
            VideoError::EmptyVideo(_) => ErrorCode::EmptyVideo,
            VideoError::Range { .. } => ErrorCode::RangeError,
            VideoError::Write { .. } => ErrorCode::WriteError,
            VideoError::Dimensions { .. } => ErrorCode::ShapeError,
        }
    }
}

fn open_err(locator: &Path, reason: impl ToString) -> VideoError {
    VideoError::Open {
        locator: locator.display().to_string(),
        reason: reason.to_string(),
    }
}

fn write_err(locator: &Path, reason: impl ToString) -> VideoError {
    VideoError::Write {
        locator: locator.display().to_string(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContainerKind {
    ImageSequence,
    Gif,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct SequenceSidecar {
    fps: f64,
}

/// Opened video: metadata only, frames are decoded on demand.
#[derive(Debug, Clone)]
pub struct VideoSource {
    pub locator: PathBuf,
    pub kind: ContainerKind,
    pub width: u32,
    pub height: u32,
    pub frame_count: u32,
    pub fps: f64,
    timestamps: Option<Vec<f64>>,
    files: Vec<PathBuf>,
}

/// One decoded frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: u32,
    pub timestamp: f64,
    pub pixels: RgbImage,
}

impl Frame {
    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.pixels.dimensions()
    }
}

impl VideoSource {
    pub fn timestamp(&self, index: u32) -> f64 {
        self.timestamps
            .as_ref()
            .and_then(|t| t.get(index as usize).copied())
            .unwrap_or(index as f64 / self.fps)
    }

    pub fn frame(&self, index: u32) -> Result<Frame, VideoError> {
        let end = index.checked_add(1).unwrap_or(index);
        let mut frames = extract_frames(self, index, end, 1)?;
        Ok(frames.remove(0))
    }

    /// Decodes an arbitrary ascending set of indices in one pass.
    pub fn frames_at(&self, indices: &[u32]) -> Result<Vec<Frame>, VideoError> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.frame_count) {
            return Err(VideoError::Range {
                start: bad,
                end: bad + 1,
                stride: 1,
                frame_count: self.frame_count,
            });
        }
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let decoded = self.decode(&sorted)?;
        Ok(indices
            .iter()
            .map(|i| {
                let pos = sorted.binary_search(i).expect("index present");
                decoded[pos].clone()
            })
            .collect())
    }

    fn decode(&self, sorted: &[u32]) -> Result<Vec<Frame>, VideoError> {
        let expected = (self.width, self.height);
        let check = |index: u32, pixels: RgbImage| -> Result<Frame, VideoError> {
            if pixels.dimensions() != expected {
                return Err(VideoError::Dimensions {
                    index,
                    got: pixels.dimensions(),
                    expected,
                });
            }
            Ok(Frame {
                index,
                timestamp: self.timestamp(index),
                pixels,
            })
        };
        match self.kind {
            ContainerKind::ImageSequence => sorted
                .iter()
                .map(|&i| {
                    let path = &self.files[i as usize];
                    let img = image::open(path).map_err(|e| open_err(path, e))?;
                    check(i, img.to_rgb8())
                })
                .collect(),
            ContainerKind::Gif => {
                let mut out = Vec::with_capacity(sorted.len());
                let Some(&last) = sorted.last() else {
                    return Ok(out);
                };
                let mut wanted = sorted.iter().peekable();
                for (i, frame) in gif_frames(&self.locator)?.enumerate() {
                    let i = i as u32;
                    if i > last {
                        break;
                    }
                    let frame = frame.map_err(|e| open_err(&self.locator, e))?;
                    if wanted.peek() == Some(&&i) {
                        wanted.next();
                        let rgb = DynamicImage::ImageRgba8(frame.into_buffer()).to_rgb8();
                        out.push(check(i, rgb)?);
                    }
                }
                if out.len() != sorted.len() {
                    return Err(open_err(&self.locator, "container ended early"));
                }
                Ok(out)
            }
        }
    }
}

fn gif_frames(path: &Path) -> Result<image::Frames<'static>, VideoError> {
    let file = File::open(path).map_err(|e| open_err(path, e))?;
    let decoder = GifDecoder::new(BufReader::new(file)).map_err(|e| open_err(path, e))?;
    Ok(decoder.into_frames())
}

fn is_image_file(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn is_gif(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("gif"))
}

/// Reads container metadata. For GIF this walks the frame headers once to
/// count frames and collect their delays.
pub fn open_video(locator: impl AsRef<Path>) -> Result<VideoSource, VideoError> {
    let locator = locator.as_ref();
    if locator.is_dir() {
        open_sequence(locator)
    } else if locator.is_file() {
        open_gif(locator)
    } else {
        Err(open_err(locator, "no such file or directory"))
    }
}

fn open_sequence(dir: &Path) -> Result<VideoSource, VideoError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| open_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_image_file(p))
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    let Some(first) = files.first() else {
        return Err(VideoError::EmptyVideo(dir.display().to_string()));
    };
    let (width, height) = image::image_dimensions(first).map_err(|e| open_err(first, e))?;
    let fps = match fs::read(dir.join(SEQUENCE_SIDECAR)) {
        Ok(bytes) => {
            let sidecar: SequenceSidecar =
                serde_json::from_slice(&bytes).map_err(|e| open_err(dir, e))?;
            sidecar.fps
        }
        Err(_) => DEFAULT_SEQUENCE_FPS,
    };
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(open_err(dir, format!("invalid frame rate {fps}")));
    }
    Ok(VideoSource {
        locator: dir.to_path_buf(),
        kind: ContainerKind::ImageSequence,
        width,
        height,
        frame_count: files.len() as u32,
        fps,
        timestamps: None,
        files,
    })
}

fn open_gif(path: &Path) -> Result<VideoSource, VideoError> {
    let file = File::open(path).map_err(|e| open_err(path, e))?;
    let decoder = GifDecoder::new(BufReader::new(file)).map_err(|e| open_err(path, e))?;
    let mut timestamps = Vec::new();
    let mut elapsed_ms = 0.0;
    let mut dims = None;
    for frame in decoder.into_frames() {
        let frame = frame.map_err(|e| open_err(path, e))?;
        if dims.is_none() {
            dims = Some(frame.buffer().dimensions());
        }
        timestamps.push(elapsed_ms / 1000.0);
        let (num, den) = frame.delay().numer_denom_ms();
        elapsed_ms += num as f64 / den as f64;
    }
    let Some((width, height)) = dims else {
        return Err(VideoError::EmptyVideo(path.display().to_string()));
    };
    if width == 0 || height == 0 {
        return Err(open_err(path, "zero-sized canvas"));
    }
    let frame_count = timestamps.len() as u32;
    let fps = if elapsed_ms > 0.0 {
        frame_count as f64 * 1000.0 / elapsed_ms
    } else {
        DEFAULT_SEQUENCE_FPS
    };
    let timestamps = (elapsed_ms > 0.0).then_some(timestamps);
    Ok(VideoSource {
        locator: path.to_path_buf(),
        kind: ContainerKind::Gif,
        width,
        height,
        frame_count,
        fps,
        timestamps,
        files: Vec::new(),
    })
}

/// Number of frames `extract_frames` returns for a valid range.
pub fn strided_len(start: u32, end: u32, stride: u32) -> u32 {
    (end - start).div_ceil(stride)
}

/// Frames `start, start + stride, ...` below `end`, in ascending order.
pub fn extract_frames(
    src: &VideoSource,
    start: u32,
    end: u32,
    stride: u32,
) -> Result<Vec<Frame>, VideoError> {
    if stride == 0 || start >= end || end > src.frame_count {
        return Err(VideoError::Range {
            start,
            end,
            stride,
            frame_count: src.frame_count,
        });
    }
    let indices: Vec<u32> = (start..end).step_by(stride as usize).collect();
    src.decode(&indices)
}

/// Writes frames as an animated GIF (when `locator` ends in `.gif`) or as a
/// PNG sequence directory.
pub fn write_preview(frames: &[Frame], locator: impl AsRef<Path>) -> Result<(), VideoError> {
    let locator = locator.as_ref();
    let Some(first) = frames.first() else {
        return Err(write_err(locator, "no frames to encode"));
    };
    let expected = first.dimensions();
    if let Some(bad) = frames.iter().find(|f| f.dimensions() != expected) {
        return Err(VideoError::Dimensions {
            index: bad.index,
            got: bad.dimensions(),
            expected,
        });
    }
    let fps = preview_fps(frames);
    if is_gif(locator) {
        write_gif(frames.iter().map(|f| &f.pixels), fps, locator)
    } else {
        write_sequence(frames.iter().map(|f| &f.pixels), fps, locator)
    }
}

fn preview_fps(frames: &[Frame]) -> f64 {
    match frames {
        [a, b, ..] if b.timestamp > a.timestamp => 1.0 / (b.timestamp - a.timestamp),
        _ => 25.0,
    }
}

pub(crate) fn write_gif<'a>(
    frames: impl Iterator<Item = &'a RgbImage>,
    fps: f64,
    path: &Path,
) -> Result<(), VideoError> {
    let file = File::create(path).map_err(|e| write_err(path, e))?;
    let mut encoder = GifEncoder::new_with_speed(BufWriter::new(file), 10);
    encoder
        .set_repeat(Repeat::Infinite)
        .map_err(|e| write_err(path, e))?;
    let delay_ms = (1000.0 / fps).round().max(10.0) as u32;
    for rgb in frames {
        let rgba = DynamicImage::ImageRgb8(rgb.clone()).to_rgba8();
        let frame = image::Frame::from_parts(rgba, 0, 0, Delay::from_numer_denom_ms(delay_ms, 1));
        encoder.encode_frame(frame).map_err(|e| write_err(path, e))?;
    }
    Ok(())
}

pub(crate) fn write_sequence<'a>(
    frames: impl Iterator<Item = &'a RgbImage>,
    fps: f64,
    dir: &Path,
) -> Result<(), VideoError> {
    fs::create_dir_all(dir).map_err(|e| write_err(dir, e))?;
    for (i, rgb) in frames.enumerate() {
        let path = dir.join(format!("frame_{i:06}.png"));
        rgb.save(&path).map_err(|e| write_err(&path, e))?;
    }
    let sidecar = serde_json::to_vec_pretty(&SequenceSidecar { fps }).expect("serializable");
    fs::write(dir.join(SEQUENCE_SIDECAR), sidecar).map_err(|e| write_err(dir, e))
}
