//! Out-of-process backend adapters.
//!
//! Neural segmenters and memory-based trackers run in a separate process
//! that speaks a line-delimited JSON protocol on stdin/stdout: one
//! [`Request`] per line in, one [`Response`] per line out. Images travel as
//! base64 RGB bytes, label maps as base64 little-endian `u16` values.
//!
//! The adapter needs a weight locator (passed through to the plugin) and a
//! plugin command, taken from the `command` parameter or the
//! `TRACKMARK_PLUGIN` environment variable. [`serve`] implements the plugin
//! side on top of any registered in-process backend.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::ErrorCode;
use crate::mask::{MaskMap, ObjectId};
use crate::segmentation::{
    ObjectPromptSet, PromptKind, SegmentationError, Segmenter, SegmenterConfig, SegmenterDescriptor, SegmenterHandle,
    SegmenterRegistry,
};
use crate::tracking::{
    PropagationRequest, TrackControl, Tracker, TrackerConfig, TrackerDescriptor, TrackerHandle, TrackerRegistry,
    TrackingError,
};
use crate::video::Frame;

pub const PLUGIN_ENV: &str = "TRACKMARK_PLUGIN";

/// Promptable segmentation models served through plugins.
pub fn neural_segmenters() -> Vec<SegmenterDescriptor> {
    vec![
        SegmenterDescriptor::new("sam2", &[PromptKind::Box, PromptKind::Point, PromptKind::Both]),
        SegmenterDescriptor::new("fastsam", &[PromptKind::Box, PromptKind::Point]),
    ]
}

/// Memory-based propagation model served through a plugin. Reseeded frames
/// are its permanent memory.
pub fn memory_tracker() -> TrackerDescriptor {
    TrackerDescriptor {
        name: "xmem++".into(),
        supports_reseed: true,
        suggests_candidates: true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Segmenter,
    Tracker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireFrame {
    pub index: u32,
    pub timestamp: f64,
    pub width: u32,
    pub height: u32,
    pub rgb: String,
}

impl WireFrame {
    pub fn encode(frame: &Frame) -> Self {
        WireFrame {
            index: frame.index,
            timestamp: frame.timestamp,
            width: frame.width(),
            height: frame.height(),
            rgb: B64.encode(frame.pixels.as_raw()),
        }
    }

    pub fn decode(&self) -> Result<Frame, String> {
        let raw = B64.decode(&self.rgb).map_err(|e| e.to_string())?;
        let pixels = RgbImage::from_raw(self.width, self.height, raw).ok_or("frame buffer size mismatch")?;
        Ok(Frame { index: self.index, timestamp: self.timestamp, pixels })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMask {
    pub width: u32,
    pub height: u32,
    pub labels: String,
    pub object_ids: Vec<u16>,
}

impl WireMask {
    pub fn encode(mask: &MaskMap) -> Self {
        let bytes: Vec<u8> = mask.labels().iter().flat_map(|l| l.to_le_bytes()).collect();
        WireMask {
            width: mask.width(),
            height: mask.height(),
            labels: B64.encode(bytes),
            object_ids: mask.object_ids().iter().map(|id| id.get()).collect(),
        }
    }

    pub fn decode(&self) -> Result<MaskMap, String> {
        let bytes = B64.decode(&self.labels).map_err(|e| e.to_string())?;
        if bytes.len() % 2 != 0 {
            return Err("odd label byte count".into());
        }
        let labels = bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
        let extra = self.object_ids.iter().filter_map(|&i| ObjectId::new(i));
        MaskMap::from_labels(self.width, self.height, labels, extra).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Init {
        role: Role,
        backend: String,
        weights: Option<String>,
        device: Option<String>,
        #[serde(default)]
        params: BTreeMap<String, String>,
    },
    SetImage { frame: WireFrame },
    Predict { prompts: Vec<ObjectPromptSet> },
    Propagate { frames: Vec<WireFrame>, seed_index: usize, seed_mask: WireMask },
    Reseed { frame_index: usize, mask: WireMask },
    Masks,
    Candidates { limit: usize },
    Shutdown,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Response {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<ErrorCode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<WireMask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<Vec<WireMask>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_mb: Option<f64>,
}

impl Response {
    fn ok() -> Self {
        Response { ok: true, ..Default::default() }
    }

    fn error(code: ErrorCode, message: impl ToString) -> Self {
        Response {
            ok: false,
            code: Some(code),
            message: Some(message.to_string()),
            ..Default::default()
        }
    }
}

struct PluginProcess {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

impl PluginProcess {
    fn launch(
        role: Role,
        backend: &str,
        weights: Option<&str>,
        device: Option<&str>,
        params: &BTreeMap<String, String>,
    ) -> Result<Self, String> {
        let weights = weights.ok_or_else(|| format!("no weight locator configured for `{backend}`"))?;
        if !Path::new(weights).exists() {
            return Err(format!("weights not found at {weights}"));
        }
        let command = params
            .get("command")
            .cloned()
            .or_else(|| std::env::var(PLUGIN_ENV).ok())
            .ok_or_else(|| format!("no plugin command for `{backend}` (set `command` or {PLUGIN_ENV})"))?;
        let mut parts = command.split_whitespace();
        let program = parts.next().ok_or("empty plugin command")?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| format!("cannot start plugin `{program}`: {e}"))?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped"));
        let stdout = BufReader::new(child.stdout.take().expect("piped"));
        let mut process = PluginProcess { child, stdin, stdout };
        let mut forwarded = params.clone();
        forwarded.remove("command");
        let resp = process.call(&Request::Init {
            role,
            backend: backend.to_string(),
            weights: Some(weights.to_string()),
            device: device.map(str::to_string),
            params: forwarded,
        })?;
        if !resp.ok {
            return Err(resp.message.unwrap_or_else(|| "plugin refused init".into()));
        }
        Ok(process)
    }

    fn call(&mut self, req: &Request) -> Result<Response, String> {
        let line = serde_json::to_string(req).map_err(|e| e.to_string())?;
        writeln!(self.stdin, "{line}").map_err(|e| format!("plugin write: {e}"))?;
        self.stdin.flush().map_err(|e| format!("plugin write: {e}"))?;
        let mut reply = String::new();
        let n = self.stdout.read_line(&mut reply).map_err(|e| format!("plugin read: {e}"))?;
        if n == 0 {
            return Err("plugin closed its output".into());
        }
        serde_json::from_str(&reply).map_err(|e| format!("malformed plugin reply: {e}"))
    }
}

impl Drop for PluginProcess {
    fn drop(&mut self) {
        let _ = self.call(&Request::Shutdown);
        let _ = self.child.wait();
    }
}

fn failure(resp: &Response) -> String {
    format!(
        "{}: {}",
        resp.code.map_or("internal", ErrorCode::as_str),
        resp.message.as_deref().unwrap_or("plugin error")
    )
}

/// Segmenter running in a plugin process.
pub struct ProcessSegmenter {
    descriptor: SegmenterDescriptor,
    process: PluginProcess,
    memory_mb: Option<f64>,
}

impl ProcessSegmenter {
    pub fn spawn(descriptor: SegmenterDescriptor, config: &SegmenterConfig) -> Result<Self, SegmentationError> {
        let process = PluginProcess::launch(
            Role::Segmenter,
            &descriptor.name,
            config.weights.as_deref(),
            config.device.as_deref(),
            &config.params,
        )
        .map_err(SegmentationError::Load)?;
        Ok(ProcessSegmenter { descriptor, process, memory_mb: None })
    }

    fn call(&mut self, req: &Request) -> Result<Response, SegmentationError> {
        let resp = self.process.call(req).map_err(SegmentationError::Backend)?;
        if !resp.ok {
            return Err(SegmentationError::Backend(failure(&resp)));
        }
        if resp.memory_mb.is_some() {
            self.memory_mb = resp.memory_mb;
        }
        Ok(resp)
    }
}

impl Segmenter for ProcessSegmenter {
    fn descriptor(&self) -> &SegmenterDescriptor {
        &self.descriptor
    }

    fn set_image(&mut self, frame: &Frame) -> Result<(), SegmentationError> {
        self.call(&Request::SetImage { frame: WireFrame::encode(frame) }).map(|_| ())
    }

    fn predict_mask(&mut self, prompts: &[ObjectPromptSet]) -> Result<MaskMap, SegmentationError> {
        let resp = self.call(&Request::Predict { prompts: prompts.to_vec() })?;
        resp.mask
            .ok_or_else(|| SegmentationError::Backend("reply without mask".into()))?
            .decode()
            .map_err(SegmentationError::Backend)
    }

    fn peak_memory_mb(&self) -> Option<f64> {
        self.memory_mb
    }
}

/// Tracker running in a plugin process.
pub struct ProcessTracker {
    descriptor: TrackerDescriptor,
    process: PluginProcess,
}

impl ProcessTracker {
    pub fn spawn(descriptor: TrackerDescriptor, config: &TrackerConfig) -> Result<Self, TrackingError> {
        let process = PluginProcess::launch(
            Role::Tracker,
            &descriptor.name,
            config.weights.as_deref(),
            config.device.as_deref(),
            &config.params,
        )
        .map_err(TrackingError::Load)?;
        Ok(ProcessTracker { descriptor, process })
    }

    fn call(&mut self, req: &Request) -> Result<Response, TrackingError> {
        let resp = self.process.call(req).map_err(TrackingError::Backend)?;
        if !resp.ok {
            return Err(match resp.code {
                Some(ErrorCode::CapabilityError) => TrackingError::Capability {
                    backend: self.descriptor.name.clone(),
                    capability: "the requested operation",
                },
                _ => TrackingError::Backend(failure(&resp)),
            });
        }
        Ok(resp)
    }

    fn decode_masks(resp: Response) -> Result<Vec<MaskMap>, TrackingError> {
        resp.masks
            .ok_or_else(|| TrackingError::Backend("reply without masks".into()))?
            .iter()
            .map(|m| m.decode().map_err(TrackingError::Backend))
            .collect()
    }
}

impl Tracker for ProcessTracker {
    fn descriptor(&self) -> &TrackerDescriptor {
        &self.descriptor
    }

    fn propagate(&mut self, req: &PropagationRequest, ctl: &TrackControl) -> Result<Vec<MaskMap>, TrackingError> {
        ctl.checkpoint()?;
        ctl.start(req.frames.len());
        let resp = self.call(&Request::Propagate {
            frames: req.frames.iter().map(WireFrame::encode).collect(),
            seed_index: req.seed_index,
            seed_mask: WireMask::encode(&req.seed_mask),
        })?;
        let masks = Self::decode_masks(resp)?;
        for _ in 0..masks.len() {
            ctl.advance();
        }
        Ok(masks)
    }

    fn reseed(&mut self, frame_index: usize, mask: &MaskMap, ctl: &TrackControl) -> Result<(), TrackingError> {
        ctl.checkpoint()?;
        self.call(&Request::Reseed { frame_index, mask: WireMask::encode(mask) }).map(|_| ())
    }

    fn current_masks(&mut self) -> Result<Vec<MaskMap>, TrackingError> {
        let resp = self.call(&Request::Masks)?;
        Self::decode_masks(resp)
    }

    fn suggest_candidates(&mut self, limit: usize) -> Result<Vec<usize>, TrackingError> {
        let resp = self.call(&Request::Candidates { limit })?;
        resp.candidates
            .ok_or_else(|| TrackingError::Backend("reply without candidates".into()))
    }
}

/// In-process backends a plugin host exposes, whatever the client asks for
/// in its `init` request.
#[derive(Debug, Clone)]
pub struct HostedBackends {
    pub segmenter: SegmenterConfig,
    pub tracker: TrackerConfig,
}

impl Default for HostedBackends {
    fn default() -> Self {
        HostedBackends {
            segmenter: SegmenterConfig::named("region-grow"),
            tracker: TrackerConfig::named("baseline-ncc"),
        }
    }
}

/// Plugin side of the protocol: answers requests until `shutdown` or EOF.
pub fn serve(
    input: impl BufRead,
    mut output: impl Write,
    hosted: &HostedBackends,
    segmenters: &SegmenterRegistry,
    trackers: &TrackerRegistry,
) -> io::Result<()> {
    let mut segmenter: Option<SegmenterHandle> = None;
    let mut tracker: Option<TrackerHandle> = None;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (resp, stop) = match serde_json::from_str::<Request>(&line) {
            Err(e) => (Response::error(ErrorCode::BadRequest, e), false),
            Ok(Request::Shutdown) => (Response::ok(), true),
            Ok(req) => (handle(req, hosted, segmenters, trackers, &mut segmenter, &mut tracker), false),
        };
        writeln!(output, "{}", serde_json::to_string(&resp).expect("serializable"))?;
        output.flush()?;
        if stop {
            break;
        }
    }
    Ok(())
}

fn handle(
    req: Request,
    hosted: &HostedBackends,
    segmenters: &SegmenterRegistry,
    trackers: &TrackerRegistry,
    segmenter: &mut Option<SegmenterHandle>,
    tracker: &mut Option<TrackerHandle>,
) -> Response {
    let ctl = TrackControl::new();
    let result: Result<Response, (ErrorCode, String)> = (|| match req {
        Request::Init { role: Role::Segmenter, .. } => {
            let h = segmenters.init(&hosted.segmenter).map_err(|e| (e.code(), e.to_string()))?;
            *segmenter = Some(h);
            Ok(Response::ok())
        }
        Request::Init { role: Role::Tracker, .. } => {
            let h = trackers.init(&hosted.tracker).map_err(|e| (e.code(), e.to_string()))?;
            *tracker = Some(h);
            Ok(Response::ok())
        }
        Request::SetImage { frame } => {
            let h = segmenter.as_mut().ok_or((ErrorCode::StateError, "not initialized".into()))?;
            let frame = frame.decode().map_err(|e| (ErrorCode::BadRequest, e))?;
            h.set_image(&frame).map_err(|e| (e.code(), e.to_string()))?;
            Ok(Response::ok())
        }
        Request::Predict { prompts } => {
            let h = segmenter.as_mut().ok_or((ErrorCode::StateError, "not initialized".into()))?;
            let mask = h.predict_mask(&prompts).map_err(|e| (e.code(), e.to_string()))?;
            Ok(Response {
                mask: Some(WireMask::encode(&mask)),
                memory_mb: h.peak_memory_mb(),
                ..Response::ok()
            })
        }
        Request::Propagate { frames, seed_index, seed_mask } => {
            let h = tracker.as_mut().ok_or((ErrorCode::StateError, "not initialized".into()))?;
            let frames = frames
                .iter()
                .map(WireFrame::decode)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| (ErrorCode::BadRequest, e))?;
            let seed_mask = seed_mask.decode().map_err(|e| (ErrorCode::BadRequest, e))?;
            let req = PropagationRequest { frames, seed_index, seed_mask };
            let masks = h.propagate(&req, &ctl).map_err(|e| (e.code(), e.to_string()))?;
            Ok(Response {
                masks: Some(masks.iter().map(WireMask::encode).collect()),
                ..Response::ok()
            })
        }
        Request::Reseed { frame_index, mask } => {
            let h = tracker.as_mut().ok_or((ErrorCode::StateError, "not initialized".into()))?;
            let mask = mask.decode().map_err(|e| (ErrorCode::BadRequest, e))?;
            h.reseed(frame_index, &mask, &ctl).map_err(|e| (e.code(), e.to_string()))?;
            Ok(Response::ok())
        }
        Request::Masks => {
            let h = tracker.as_mut().ok_or((ErrorCode::StateError, "not initialized".into()))?;
            let masks = h.current_masks().map_err(|e| (e.code(), e.to_string()))?;
            Ok(Response {
                masks: Some(masks.iter().map(WireMask::encode).collect()),
                ..Response::ok()
            })
        }
        Request::Candidates { limit } => {
            let h = tracker.as_mut().ok_or((ErrorCode::StateError, "not initialized".into()))?;
            let c = h.suggest_candidates(limit).map_err(|e| (e.code(), e.to_string()))?;
            Ok(Response { candidates: Some(c), ..Response::ok() })
        }
        Request::Shutdown => Ok(Response::ok()),
    })();
    result.unwrap_or_else(|(code, msg)| Response::error(code, msg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::SquareFixture;
    use crate::segmentation::PointPrompt;

    fn oid(k: u16) -> ObjectId {
        ObjectId::new(k).unwrap()
    }

    fn roundtrip(requests: &[Request]) -> Vec<Response> {
        let input: String = requests
            .iter()
            .map(|r| serde_json::to_string(r).unwrap() + "\n")
            .collect();
        let mut out = Vec::new();
        serve(
            input.as_bytes(),
            &mut out,
            &HostedBackends::default(),
            &SegmenterRegistry::with_defaults(),
            &TrackerRegistry::with_defaults(),
        )
        .unwrap();
        String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    #[test]
    fn wire_mask_round_trip() {
        let mut m = SquareFixture::default().ground_truth(3, oid(4));
        m.declare(oid(9));
        assert_eq!(WireMask::encode(&m).decode().unwrap(), m);
    }

    #[test]
    fn host_serves_segmentation() {
        let fx = SquareFixture::default();
        let frame = Frame { index: 0, timestamp: 0.0, pixels: fx.frame(0) };
        let replies = roundtrip(&[
            Request::Predict { prompts: vec![] },
            Request::Init {
                role: Role::Segmenter,
                backend: "sam2".into(),
                weights: Some("w".into()),
                device: None,
                params: BTreeMap::new(),
            },
            Request::SetImage { frame: WireFrame::encode(&frame) },
            Request::Predict {
                prompts: vec![ObjectPromptSet::points(oid(1), vec![PointPrompt::positive(20, 20)])],
            },
            Request::Shutdown,
            Request::Masks,
        ]);
        assert_eq!(replies.len(), 5);
        assert!(!replies[0].ok);
        assert_eq!(replies[0].code, Some(ErrorCode::StateError));
        assert!(replies[1].ok && replies[2].ok && replies[3].ok);
        let mask = replies[3].mask.as_ref().unwrap().decode().unwrap();
        assert_eq!(mask, fx.ground_truth(0, oid(1)));
    }

    #[test]
    fn host_reports_malformed_lines() {
        let mut out = Vec::new();
        serve(
            "{not json}\n".as_bytes(),
            &mut out,
            &HostedBackends::default(),
            &SegmenterRegistry::with_defaults(),
            &TrackerRegistry::with_defaults(),
        )
        .unwrap();
        let resp: Response = serde_json::from_slice(&out).unwrap();
        assert_eq!(resp.code, Some(ErrorCode::BadRequest));
    }

    #[test]
    fn missing_command_is_load_error() {
        let dir = tempfile::tempdir().unwrap();
        let weights = dir.path().join("w.bin");
        std::fs::write(&weights, b"").unwrap();
        let cfg = SegmenterConfig {
            weights: Some(weights.display().to_string()),
            ..SegmenterConfig::named("sam2")
        }
        .with_param("command", "/nonexistent/plugin-binary");
        let err = SegmenterRegistry::with_defaults().init(&cfg).unwrap_err();
        assert_eq!(err.code(), ErrorCode::LoadError);
    }
}
