use super::{PropagationRequest, TrackControl, Tracker, TrackerDescriptor, TrackingError};
use crate::mask::MaskMap;

/// Repeats the seed mask on every frame. Has no reseed support.
#[derive(Debug)]
pub struct HoldTracker {
    descriptor: TrackerDescriptor,
    masks: Vec<MaskMap>,
}

impl HoldTracker {
    pub const NAME: &'static str = "hold";

    pub fn descriptor_static() -> TrackerDescriptor {
        TrackerDescriptor {
            name: Self::NAME.into(),
            supports_reseed: false,
            suggests_candidates: false,
        }
    }

    pub fn new() -> Self {
        HoldTracker {
            descriptor: Self::descriptor_static(),
            masks: Vec::new(),
        }
    }
}

impl Default for HoldTracker {
    fn default() -> Self {
        Self::new()
    }
}

impl Tracker for HoldTracker {
    fn descriptor(&self) -> &TrackerDescriptor {
        &self.descriptor
    }

    fn propagate(&mut self, req: &PropagationRequest, ctl: &TrackControl) -> Result<Vec<MaskMap>, TrackingError> {
        ctl.start(req.frames.len());
        self.masks.clear();
        for _ in &req.frames {
            ctl.checkpoint()?;
            self.masks.push(req.seed_mask.clone());
            ctl.advance();
        }
        Ok(self.masks.clone())
    }

    fn current_masks(&mut self) -> Result<Vec<MaskMap>, TrackingError> {
        Ok(self.masks.clone())
    }
}
