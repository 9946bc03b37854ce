//! Timing mock: sleeps for configured durations and paints prompts verbatim.

use std::thread;
use std::time::Duration;

use super::{ObjectPromptSet, Polarity, PromptKind, SegmentationError, Segmenter, SegmenterConfig, SegmenterDescriptor};
use crate::mask::MaskMap;
use crate::video::Frame;

/// Parameters: `init_ms`, `image_ms`, `predict_ms` (default 0) and an
/// optional `memory_mb` reported through the memory probe.
pub struct MockSegmenter {
    descriptor: SegmenterDescriptor,
    image_delay: Duration,
    predict_delay: Duration,
    memory_mb: Option<f64>,
    dims: Option<(u32, u32)>,
}

impl MockSegmenter {
    pub const NAME: &'static str = "mock";

    pub fn descriptor_static() -> SegmenterDescriptor {
        SegmenterDescriptor::new(Self::NAME, &[PromptKind::Box, PromptKind::Point, PromptKind::Both])
    }

    pub fn from_config(config: &SegmenterConfig) -> Result<Self, SegmentationError> {
        let ms = |key| -> Result<Duration, SegmentationError> {
            let v: f64 = config.parse_param(key, 0.0)?;
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SegmentationError::Config(format!("`{key}` must be a non-negative number")));
            }
            Ok(Duration::from_secs_f64(v / 1000.0))
        };
        let init = ms("init_ms")?;
        let image_delay = ms("image_ms")?;
        let predict_delay = ms("predict_ms")?;
        let memory_mb = match config.params.get("memory_mb") {
            Some(_) => Some(config.parse_param("memory_mb", 0.0)?),
            None => None,
        };
        sleep(init);
        Ok(MockSegmenter {
            descriptor: Self::descriptor_static(),
            image_delay,
            predict_delay,
            memory_mb,
            dims: None,
        })
    }
}

fn sleep(d: Duration) {
    if !d.is_zero() {
        thread::sleep(d);
    }
}

impl Segmenter for MockSegmenter {
    fn descriptor(&self) -> &SegmenterDescriptor {
        &self.descriptor
    }

    fn set_image(&mut self, frame: &Frame) -> Result<(), SegmentationError> {
        sleep(self.image_delay);
        self.dims = Some(frame.dimensions());
        Ok(())
    }

    fn predict_mask(&mut self, prompts: &[ObjectPromptSet]) -> Result<MaskMap, SegmentationError> {
        sleep(self.predict_delay);
        let (w, h) = self.dims.ok_or(SegmentationError::NoImage)?;
        let mut mask = MaskMap::new(w, h);
        for set in prompts {
            mask.declare(set.object_id);
            for b in &set.boxes {
                for y in b.0.y0..b.0.y1 {
                    for x in b.0.x0..b.0.x1 {
                        mask.set(x, y, Some(set.object_id));
                    }
                }
            }
            for p in set.points.iter().filter(|p| p.polarity == Polarity::Positive) {
                mask.set(p.x, p.y, Some(set.object_id));
            }
        }
        Ok(mask)
    }

    fn peak_memory_mb(&self) -> Option<f64> {
        self.memory_mb
    }
}
