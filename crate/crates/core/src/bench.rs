//! Segmenter timing harness and comparison table.
//!
//! Model initialization is timed once, cold. Image initialization and mask
//! prediction run `repetitions + 1` times; the first run is discarded and
//! the median of the rest is reported, with the median absolute deviation
//! as dispersion. Memory comes from the backend's own probe when it has
//! one, otherwise from the growth of the process peak resident set.

use std::collections::BTreeSet;
use std::fs;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::ErrorCode;
use crate::segmentation::{ObjectPromptSet, PromptKind, SegmentationError, SegmenterConfig, SegmenterRegistry};
use crate::video::Frame;

pub const WARMUP_RUNS: u32 = 1;

/// Column headers of the comparison table, in order.
pub const TABLE_COLUMNS: [&str; 8] = [
    "Method",
    "Initializing model (ms)",
    "Image Initialization (ms)",
    "Mask prediction (ms)",
    "VRAM (MB)",
    "Prompts",
    "repetitions",
    "dispersion",
];

pub const UNAVAILABLE: &str = "n/a";

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid benchmark request: {0}")]
    Config(String),
    #[error("another benchmark is running")]
    Busy,
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
}

impl BenchError {
    pub fn code(&self) -> ErrorCode {
        match self {
            BenchError::Config(_) => ErrorCode::ConfigError,
            BenchError::Busy => ErrorCode::Busy,
            BenchError::Segmentation(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemorySource {
    Backend,
    Process,
    Unavailable,
}

/// Median absolute deviation of the repeated metrics, in ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    pub image_init_ms: f64,
    pub mask_predict_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub backend: String,
    pub model_init_ms: f64,
    pub image_init_ms: f64,
    pub mask_predict_ms: f64,
    /// `None` when no probe was available.
    pub peak_memory_mb: Option<f64>,
    pub memory_source: MemorySource,
    pub prompts: BTreeSet<PromptKind>,
    pub repetitions: u32,
    pub warmup_runs: u32,
    pub statistic: String,
    /// `None` for externally reported numbers.
    pub dispersion: Option<Dispersion>,
}

impl BenchmarkReport {
    fn reference(backend: &str, init: f64, image: f64, predict: f64, memory: f64, prompts: &[PromptKind]) -> Self {
        BenchmarkReport {
            backend: backend.into(),
            model_init_ms: init,
            image_init_ms: image,
            mask_predict_ms: predict,
            peak_memory_mb: Some(memory),
            memory_source: MemorySource::Backend,
            prompts: prompts.iter().copied().collect(),
            repetitions: 1,
            warmup_runs: 0,
            statistic: "reported".into(),
            dispersion: None,
        }
    }
}

/// Published figures for the two neural backends (RTX 2060 Super).
pub fn reference_rows() -> Vec<BenchmarkReport> {
    use PromptKind::*;
    vec![
        BenchmarkReport::reference("FastSAM", 1357.0, 379.0, 15.0, 607.0, &[Box, Point]),
        BenchmarkReport::reference("SAM2", 2722.0, 660.0, 50.0, 1476.0, &[Box, Point, Both]),
    ]
}

static RUNNING: AtomicBool = AtomicBool::new(false);

struct RunGuard;

impl RunGuard {
    fn acquire() -> Result<Self, BenchError> {
        RUNNING
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .map(|_| RunGuard)
            .map_err(|_| BenchError::Busy)
    }
}

impl Drop for RunGuard {
    fn drop(&mut self) {
        RUNNING.store(false, Ordering::Release);
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn median_absolute_deviation(values: &[f64]) -> f64 {
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

/// Peak resident set of this process in MiB, from `/proc`.
fn process_peak_mb() -> Option<f64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: f64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb / 1024.0)
}

/// Times one backend. Only one benchmark may run per process at a time.
pub fn run_benchmark(
    registry: &SegmenterRegistry,
    config: &SegmenterConfig,
    frame: &Frame,
    prompts: &[ObjectPromptSet],
    repetitions: u32,
) -> Result<BenchmarkReport, BenchError> {
    if repetitions == 0 {
        return Err(BenchError::Config("repetitions must be at least 1".into()));
    }
    let _guard = RunGuard::acquire()?;
    let rss_before = process_peak_mb();
    let mut handle = registry.init(config)?;
    let mut image_times = Vec::with_capacity(repetitions as usize);
    let mut predict_times = Vec::with_capacity(repetitions as usize);
    for run in 0..repetitions + WARMUP_RUNS {
        let t = Instant::now();
        handle.set_image(frame)?;
        let image = ms(t.elapsed());
        let t = Instant::now();
        handle.predict_mask(prompts)?;
        let predict = ms(t.elapsed());
        if run >= WARMUP_RUNS {
            image_times.push(image);
            predict_times.push(predict);
        }
    }
    let (peak_memory_mb, memory_source) = match handle.peak_memory_mb() {
        Some(mb) => (Some(mb), MemorySource::Backend),
        None => match (rss_before, process_peak_mb()) {
            (Some(a), Some(b)) => (Some((b - a).max(0.0)), MemorySource::Process),
            _ => (None, MemorySource::Unavailable),
        },
    };
    Ok(BenchmarkReport {
        backend: config.name.clone(),
        model_init_ms: ms(handle.init_duration()),
        image_init_ms: median(&image_times),
        mask_predict_ms: median(&predict_times),
        peak_memory_mb,
        memory_source,
        prompts: handle.descriptor().supported_prompts.clone(),
        repetitions,
        warmup_runs: WARMUP_RUNS,
        statistic: "median".into(),
        dispersion: Some(Dispersion {
            image_init_ms: median_absolute_deviation(&image_times),
            mask_predict_ms: median_absolute_deviation(&predict_times),
        }),
    })
}

/// Whole numbers print without a fraction, others with one decimal.
pub fn format_ms(v: f64) -> String {
    let r = (v * 10.0).round() / 10.0;
    if r.fract() == 0.0 {
        format!("{r:.0}")
    } else {
        format!("{r:.1}")
    }
}

fn prompt_list(kinds: &BTreeSet<PromptKind>) -> String {
    kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub reports: Vec<BenchmarkReport>,
}

impl ComparisonTable {
    /// Space-padded columns separated by ` | `, with a dashed rule under
    /// the header.
    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.columns.iter().map(|c| c.chars().count()).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
                .trim_end()
                .to_string()
        };
        let mut out = line(&self.columns);
        out.push('\n');
        out.push_str(&widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("-|-"));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table is serializable")
    }
}

pub fn render_report(reports: &[BenchmarkReport]) -> Result<ComparisonTable, BenchError> {
    if reports.is_empty() {
        return Err(BenchError::Config("no reports to render".into()));
    }
    let rows = reports
        .iter()
        .map(|r| {
            vec![
                r.backend.clone(),
                format_ms(r.model_init_ms),
                format_ms(r.image_init_ms),
                format_ms(r.mask_predict_ms),
                r.peak_memory_mb.map_or_else(|| UNAVAILABLE.to_string(), format_ms),
                prompt_list(&r.prompts),
                r.repetitions.to_string(),
                r.dispersion.map_or_else(
                    || UNAVAILABLE.to_string(),
                    |d| format!("{} / {}", format_ms(d.image_init_ms), format_ms(d.mask_predict_ms)),
                ),
            ]
        })
        .collect();
    Ok(ComparisonTable {
        columns: TABLE_COLUMNS.iter().map(|c| c.to_string()).collect(),
        rows,
        reports: reports.to_vec(),
    })
}
