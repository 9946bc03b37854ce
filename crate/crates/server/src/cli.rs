use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use trackmark_core::export::{self, ExportOptions};
use trackmark_core::fixture::SquareFixture;
use trackmark_core::plugin::{self, HostedBackends};
use trackmark_core::segmentation::SegmenterConfig;
use trackmark_core::session::{CreateOptions, LabelClass, SessionSummary, TrackOptions, TrackOutcome, DEFAULT_MAX_FRAMES};
use trackmark_core::tracking::{TrackControl, TrackerConfig};
use trackmark_core::{Engines, ErrorCode, Session};

use crate::api::{self, BenchRequest};
use crate::config::{self, ServiceConfig};
use crate::error::{ApiError, ApiResult};
use crate::workflow::{self, PixelObject};

/// Exit status when `validate` finds violations.
pub const EXIT_VIOLATIONS: u8 = 1;

#[derive(Debug, Parser)]
#[command(name = "trackmark", version, about = "Interactive video annotation to YOLO datasets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a session from a video and a prompts file, track every
    /// prompted segment and apply corrections.
    Annotate(AnnotateArgs),
    /// Write a session's YOLO dataset.
    Export(ExportArgs),
    /// Check a YOLO dataset and print the report.
    Validate(ValidateArgs),
    /// Time a segmenter backend.
    Bench(BenchArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Write the synthetic translating-square video.
    Fixture(FixtureArgs),
    /// Serve the plugin protocol on stdin/stdout with in-process backends.
    #[command(hide = true)]
    PluginHost(PluginHostArgs),
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    /// GIF file or image-sequence directory.
    pub video: PathBuf,
    /// JSON prompts file (pixel coordinates).
    #[arg(long)]
    pub prompts: PathBuf,
    /// Directory that holds sessions.
    #[arg(long, env = config::ENV_STORAGE_ROOT, default_value = "trackmark-data")]
    pub root: PathBuf,
    #[arg(long)]
    pub session_id: Option<String>,
    /// Dataset stem; the video's file stem by default.
    #[arg(long)]
    pub name: Option<String>,
    /// Comma-separated class names; overrides the prompts file.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    #[arg(long, env = config::ENV_DEFAULT_BACKEND, default_value = config::DEFAULT_BACKEND)]
    pub backend: String,
    #[arg(long, env = config::ENV_DEFAULT_TRACKER, default_value = config::DEFAULT_TRACKER)]
    pub tracker: String,
    #[arg(long, default_value_t = 1)]
    pub stride: u32,
    #[arg(long, env = config::ENV_MAX_FRAMES, default_value_t = DEFAULT_MAX_FRAMES)]
    pub max_frames: u32,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Session directory.
    pub session: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub stem: Option<String>,
    /// Also write `<out>.zip`.
    #[arg(long)]
    pub archive: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub dataset: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value = "mock")]
    pub backend: String,
    /// Backend parameter as `key=value`; repeatable.
    #[arg(long = "param", value_parser = parse_key_value)]
    pub params: Vec<(String, String)>,
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub repetitions: u32,
    /// Include the published reference rows.
    #[arg(long)]
    pub reference: bool,
    /// Print the structured report instead of the table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub storage_root: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    /// `.gif` file or a directory for a PNG sequence.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub frames: u32,
    #[arg(long, default_value_t = 128)]
    pub width: u32,
    #[arg(long, default_value_t = 128)]
    pub height: u32,
    #[arg(long, default_value_t = 20)]
    pub size: u32,
    /// Per-frame motion as `dx,dy`.
    #[arg(long, default_value = "2,1", value_parser = parse_pair)]
    pub velocity: (i32, i32),
    #[arg(long, default_value = "10,10", value_parser = parse_pair)]
    pub origin: (i32, i32),
}

#[derive(Debug, Args)]
pub struct PluginHostArgs {
    #[arg(long, default_value = "region-grow")]
    pub segmenter: String,
    #[arg(long, default_value = "baseline-ncc")]
    pub tracker: String,
}

fn parse_key_value(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected key=value, got `{s}`"))
}

fn parse_pair(s: &str) -> Result<(i32, i32), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected a,b, got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<i32>().map_err(|e| e.to_string());
    Ok((p(a)?, p(b)?))
}

/// One prompted frame in a prompts file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePrompts {
    pub frame: u32,
    pub objects: Vec<PixelObject>,
}

/// Prompts file read by `annotate`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptsFile {
    #[serde(default)]
    pub classes: Vec<String>,
    #[serde(default)]
    pub prompts: Vec<FramePrompts>,
    #[serde(default)]
    pub corrections: Vec<FramePrompts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotateReport {
    pub session_dir: PathBuf,
    pub tracks: Vec<TrackOutcome>,
    pub corrections: usize,
    pub summary: SessionSummary,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ApiError {
    ApiError::new(ErrorCode::OpenError, format!("{}: {e}", path.display()))
}

pub fn annotate(args: &AnnotateArgs, engines: &Engines) -> ApiResult<AnnotateReport> {
    let text = std::fs::read_to_string(&args.prompts).map_err(|e| io_err(&args.prompts, e))?;
    let file: PromptsFile = serde_json::from_str(&text)
        .map_err(|e| ApiError::bad_request(format!("{}: {e}", args.prompts.display())))?;
    let names = args.classes.clone().unwrap_or(file.classes);
    let options = CreateOptions { session_id: args.session_id.clone(), name: args.name.clone() };
    let mut session = Session::create(&args.root, &args.video, LabelClass::from_names(&names), options)?;
    let segmenter = SegmenterConfig::named(&args.backend);
    for p in &file.prompts {
        workflow::prompt(&mut session, engines, &segmenter, p.frame, &p.objects)?;
    }
    let tracker = TrackerConfig::named(&args.tracker);
    let options = TrackOptions { stride: args.stride, max_frames: args.max_frames };
    let ctl = TrackControl::new();
    let mut tracks = Vec::new();
    for seg in session.pending_segments() {
        tracks.push(session.track_segment(engines, seg.seed_frame, &tracker, options, &ctl)?);
    }
    for c in &file.corrections {
        workflow::correct(&mut session, engines, &segmenter, c.frame, &c.objects, &ctl)?;
    }
    Ok(AnnotateReport {
        session_dir: session.dir().to_path_buf(),
        tracks,
        corrections: file.corrections.len(),
        summary: session.summary(),
    })
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn fail(e: &ApiError) -> ExitCode {
    eprintln!("error[{}]: {}", e.code, e.message);
    ExitCode::from(e.code.exit_status() as u8)
}

pub fn run(cli: Cli) -> ExitCode {
    match execute(cli) {
        Ok(code) => code,
        Err(e) => fail(&e),
    }
}

fn execute(cli: Cli) -> ApiResult<ExitCode> {
    match cli.command {
        Command::Annotate(args) => {
            print_json(&annotate(&args, &Engines::with_defaults())?);
        }
        Command::Export(args) => {
            let session = Session::open(&args.session)?;
            let options = ExportOptions { stem: args.stem.clone(), ..Default::default() };
            let manifest = export::export_yolo(&session, &args.out, &options)?;
            if args.archive {
                let archive = export::package_archive(&args.out)?;
                eprintln!("archive: {}", archive.display());
            }
            print_json(&manifest);
        }
        Command::Validate(args) => {
            let report = export::validate_yolo(&args.dataset);
            print_json(&report);
            if !report.is_valid() {
                return Ok(ExitCode::from(EXIT_VIOLATIONS));
            }
        }
        Command::Bench(args) => {
            let req = BenchRequest {
                backend: args.backend.clone(),
                params: args.params.iter().cloned().collect::<BTreeMap<_, _>>(),
                weights: args.weights.clone(),
                repetitions: args.repetitions,
                reference: args.reference,
            };
            let out = api::run_bench(&Engines::with_defaults(), &req)?;
            if args.json {
                print_json(&out.table);
            } else {
                print!("{}", out.text);
            }
        }
        Command::Serve(args) => serve(args)?,
        Command::Fixture(args) => {
            let fx = SquareFixture {
                width: args.width,
                height: args.height,
                frames: args.frames,
                size: args.size,
                origin: args.origin,
                velocity: args.velocity,
                ..SquareFixture::default()
            };
            if args.frames == 0 || args.width == 0 || args.height == 0 {
                return Err(ApiError::new(ErrorCode::ConfigError, "frames, width and height must be positive"));
            }
            fx.write(&args.out)?;
            eprintln!("wrote {}", args.out.display());
        }
        Command::PluginHost(args) => {
            let hosted = HostedBackends {
                segmenter: SegmenterConfig::named(args.segmenter),
                tracker: TrackerConfig::named(args.tracker),
            };
            let engines = Engines::with_defaults();
            let stdin = std::io::stdin();
            plugin::serve(
                BufReader::new(stdin.lock()),
                BufWriter::new(std::io::stdout().lock()),
                &hosted,
                &engines.segmenters,
                &engines.trackers,
            )
            .map_err(|e| ApiError::internal(e.to_string()))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn serve(args: ServeArgs) -> ApiResult<()> {
    let mut config = ServiceConfig::from_env()?;
    if let Some(p) = args.port {
        config.port = p;
    }
    if let Some(r) = args.storage_root {
        config.storage_root = r;
    }
    std::fs::create_dir_all(&config.storage_root)
        .map_err(|e| ApiError::new(ErrorCode::WriteError, format!("{}: {e}", config.storage_root.display())))?;
    let addr = format!("{}:{}", args.host, config.port);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| ApiError::internal(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| ApiError::new(ErrorCode::ConfigError, format!("cannot bind {addr}: {e}")))?;
        log::info!("listening on {addr}, storage {}", config.storage_root.display());
        let app = api::router(api::AppState::new(config, Engines::with_defaults()));
        axum::serve(listener, app).await.map_err(|e| ApiError::internal(e.to_string()))
    })
}
