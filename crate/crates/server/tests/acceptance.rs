//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use image::{Rgb, RgbImage};
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde_json::{json, Value};
use trackmark_core::bench::{reference_rows, render_report, run_benchmark};
use trackmark_core::fixture::SquareFixture;
use trackmark_core::mask::{bbox_to_yolo, mask_iou, yolo_to_bbox};
use trackmark_core::segmentation::{ObjectPromptSet, PointPrompt, SegmenterConfig};
use trackmark_core::session::{CreateOptions, LabelClass, TrackOptions};
use trackmark_core::tracking::{PropagationRequest, TrackControl, TrackerConfig};
use trackmark_core::{Engines, ErrorCode, Frame, MaskMap, PixelBox, Rational, Session, YoloBox};

use support::oid;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn intervals(n: u32) -> Vec<(u32, u32)> {
    (0..n).flat_map(|a| (a + 1..=n).map(move |b| (a, b))).collect()
}

fn yolo_once(b: &PixelBox, w: u32, h: u32) -> Result<(), String> {
    let line = bbox_to_yolo::<Rational>(b, w, h, 0).map_err(|e| e.to_string())?.to_line();
    let parsed = YoloBox::<Rational>::parse_line(&line).ok_or_else(|| format!("unparsable `{line}`"))?;
    let back = yolo_to_bbox(&parsed, w, h).map_err(|e| format!("{w}x{h} `{line}`: {e}"))?;
    ensure(back == *b, || format!("{w}x{h}: {b:?} came back as {back:?}"))
}

/// Full enumeration up to 16x16; above that every interval of each axis is
/// exercised, since each label field depends on one axis only.
fn yolo_round_trip() -> Result<String, String> {
    let start = Instant::now();
    let all: Vec<_> = (0..=64).map(intervals).collect();
    let mut count = 0u64;
    for w in 1..=64u32 {
        for h in 1..=64u32 {
            let (xs, ys) = (&all[w as usize], &all[h as usize]);
            let pairs: Box<dyn Iterator<Item = ((u32, u32), (u32, u32))>> = if w <= 16 && h <= 16 {
                Box::new(xs.iter().flat_map(|&x| ys.iter().map(move |&y| (x, y))))
            } else {
                Box::new((0..xs.len().max(ys.len())).map(|i| (xs[i % xs.len()], ys[i % ys.len()])))
            };
            for ((x0, x1), (y0, y1)) in pairs {
                yolo_once(&PixelBox::new(x0, y0, x1, y1, w, h).map_err(|e| e.to_string())?, w, h)?;
                count += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{count} boxes in {elapsed:.1?}"))
}

fn fixture_frames(fx: &SquareFixture) -> Vec<Frame> {
    (0..fx.frames).map(|t| Frame { index: t, timestamp: 0.0, pixels: fx.frame(t) }).collect()
}

fn baseline_masks(fx: &SquareFixture) -> Result<Vec<MaskMap>, String> {
    let engines = Engines::with_defaults();
    let mut handle = engines.trackers.init(&TrackerConfig::named("baseline-ncc")).map_err(|e| e.to_string())?;
    let req = PropagationRequest { frames: fixture_frames(fx), seed_index: 0, seed_mask: fx.ground_truth(0, oid(1)) };
    handle.propagate(&req, &TrackControl::new()).map_err(|e| e.to_string())
}

fn tracking_oracle() -> Result<String, String> {
    let start = Instant::now();
    let fx = SquareFixture::default();
    let mut worst = 1.0f64;
    for (t, m) in baseline_masks(&fx)?.iter().enumerate() {
        let iou: f64 = mask_iou(m, &fx.ground_truth(t as u32, oid(1)), oid(1)).map_err(|e| e.to_string())?;
        worst = worst.min(iou);
    }
    ensure(worst >= 0.99, || format!("minimum IoU {worst}"))?;
    let still = SquareFixture { velocity: (0, 0), ..SquareFixture::default() };
    let seed = still.ground_truth(0, oid(1)).encode_png().map_err(|e| e.to_string())?;
    for (t, m) in baseline_masks(&still)?.iter().enumerate() {
        ensure(m.encode_png().map_err(|e| e.to_string())? == seed, || format!("still frame {t} differs from seed"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("min IoU {worst:.4}, still masks identical, {elapsed:.1?}"))
}

fn segmentation_oracle() -> Result<String, String> {
    let engines = Engines::with_defaults();
    let mut rng = StdRng::seed_from_u64(0xacce);
    for scene in 0..50 {
        let img = support::random_scene(&mut rng);
        let prompts = support::random_prompts(&mut rng, img.width(), img.height());
        let mut h = engines.segmenters.init(&SegmenterConfig::named("region-grow")).map_err(|e| e.to_string())?;
        h.set_image(&Frame { index: 0, timestamp: 0.0, pixels: img.clone() }).map_err(|e| e.to_string())?;
        let got = h.predict_mask(&prompts).map_err(|e| e.to_string())?;
        ensure(got.labels() == support::label_image(&img, &prompts, 0), || format!("scene {scene} differs"))?;
    }
    Ok("50 scenes identical".into())
}

fn click(fx: &SquareFixture, t: u32) -> Vec<ObjectPromptSet> {
    let (x, y) = fx.center(t);
    vec![ObjectPromptSet::points(oid(1), vec![PointPrompt::positive(x, y)])]
}

fn correction_semantics() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fx = SquareFixture::default();
    let video = tmp.path().join("v.gif");
    fx.write(&video).map_err(|e| e.to_string())?;
    let engines = Engines::with_defaults();
    let mut s = Session::create(tmp.path().join("s"), &video, LabelClass::from_names(&["sq"]), CreateOptions::default())
        .map_err(|e| e.to_string())?;
    let (x, y) = fx.position(0);
    let (x, y) = (x as u32 + 3, y as u32);
    let drift = vec![ObjectPromptSet::boxes(oid(1), vec![PixelBox::new(x, y, x + 20, y + 20, 128, 128).unwrap()])];
    s.prompt_frame(&engines, &SegmenterConfig::named("mock"), 0, &drift, &BTreeMap::from([(oid(1), 0)]))
        .map_err(|e| e.to_string())?;
    let ctl = TrackControl::new();
    s.track_segment(&engines, 0, &TrackerConfig::named("baseline-ncc"), TrackOptions::default(), &ctl)
        .map_err(|e| e.to_string())?;
    let before = s.snapshot().map_err(|e| e.to_string())?;
    let k = 12;
    s.correct_and_resume(&engines, &SegmenterConfig::named("region-grow"), k, &click(&fx, k), &ctl)
        .map_err(|e| e.to_string())?;
    let after = s.snapshot().map_err(|e| e.to_string())?;
    for t in 0..k {
        let key = format!("masks/{t:06}.png");
        ensure(before.get(&key) == after.get(&key), || format!("frame {t} changed"))?;
    }
    let masks = s.masks().map_err(|e| e.to_string())?;
    for t in k + 1..32 {
        let iou: f64 = mask_iou(&masks[&t], &fx.ground_truth(t, oid(1)), oid(1)).map_err(|e| e.to_string())?;
        ensure(iou == 1.0, || format!("frame {t}: IoU {iou}"))?;
    }
    Ok(format!("frames < {k} unchanged, frames > {k} IoU 1.0"))
}

fn cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_trackmark")).args(args).env_remove("TRACKMARK_MAX_FRAMES").output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn export_validity() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let video = tmp.path().join("fixture.gif");
    cli(&["fixture", "--out", s(&video)])?;
    let (x, y) = SquareFixture::default().center(0);
    let prompts = tmp.path().join("prompts.json");
    let file = json!({"classes": ["square"], "prompts": [{"frame": 0, "objects": [{"class_id": 0, "points": [{"x": x, "y": y}]}]}]});
    std::fs::write(&prompts, file.to_string()).map_err(|e| e.to_string())?;
    let root = tmp.path().join("sessions");
    cli(&["annotate", s(&video), "--prompts", s(&prompts), "--root", s(&root), "--session-id", "a"])?;
    let out = tmp.path().join("dataset");
    cli(&["export", s(&root.join("a")), "--out", s(&out)])?;
    let report: Value = serde_json::from_str(&cli(&["validate", s(&out)])?).map_err(|e| e.to_string())?;
    let violations = report["violations"].as_array().map_or(usize::MAX, Vec::len);
    ensure(violations == 0, || format!("{violations} violations"))?;

    // 10x10 frame, object at x in {2,3,4}, y in {3..6}.
    let seq = tmp.path().join("ten");
    std::fs::create_dir(&seq).map_err(|e| e.to_string())?;
    let mut img = RgbImage::from_pixel(10, 10, Rgb([0, 0, 0]));
    for y in 3..7 {
        for x in 2..5 {
            img.put_pixel(x, y, Rgb([255, 255, 255]));
        }
    }
    img.save(seq.join("0.png")).map_err(|e| e.to_string())?;
    let prompts = json!({"classes": ["obj"], "prompts": [{"frame": 0, "objects": [{"class_id": 0, "points": [{"x": 3, "y": 4}]}]}]});
    let pf = tmp.path().join("ten.json");
    std::fs::write(&pf, prompts.to_string()).map_err(|e| e.to_string())?;
    cli(&["annotate", s(&seq), "--prompts", s(&pf), "--root", s(&root), "--session-id", "ten", "--tracker", "hold"])?;
    let ten = tmp.path().join("ten-out");
    cli(&["export", s(&root.join("ten")), "--out", s(&ten), "--stem", "f"])?;
    let line = std::fs::read_to_string(ten.join("labels/f_000000.txt")).map_err(|e| e.to_string())?;
    ensure(line == "0 0.350000 0.500000 0.300000 0.400000\n", || format!("got {line:?}"))?;
    Ok(format!("{} labels, 0 violations; 10x10 line exact", report["label_count"]))
}

fn benchmark_harness() -> Result<String, String> {
    let engines = Engines::with_defaults();
    let fx = SquareFixture::default();
    let frame = Frame { index: 0, timestamp: 0.0, pixels: fx.frame(0) };
    let prompts = vec![ObjectPromptSet::boxes(oid(1), vec![PixelBox::new(8, 8, 32, 32, 128, 128).unwrap()])];
    let config = SegmenterConfig::named("mock")
        .with_param("init_ms", 50)
        .with_param("image_ms", 20)
        .with_param("predict_ms", 15);
    let r = run_benchmark(&engines.segmenters, &config, &frame, &prompts, 5).map_err(|e| e.to_string())?;
    for (name, got, want) in
        [("init", r.model_init_ms, 50.0), ("image", r.image_init_ms, 20.0), ("predict", r.mask_predict_ms, 15.0)]
    {
        ensure((got - want).abs() <= 10.0, || format!("{name}: {got:.1} ms vs {want} ms"))?;
    }
    let table = render_report(&reference_rows()).map_err(|e| e.to_string())?;
    let expected_cols =
        ["Method", "Initializing model (ms)", "Image Initialization (ms)", "Mask prediction (ms)", "VRAM (MB)"];
    ensure(table.columns[..5] == expected_cols, || format!("columns {:?}", table.columns))?;
    let text = table.to_text();
    let header: Vec<&str> = text.lines().next().unwrap_or("").split(" | ").map(str::trim).collect();
    ensure(header[..5] == expected_cols, || format!("text header {header:?}"))?;
    ensure(table.rows[0][..6] == ["FastSAM", "1357", "379", "15", "607", "box, point"], || format!("{:?}", table.rows[0]))?;
    ensure(table.rows[1][..6] == ["SAM2", "2722", "660", "50", "1476", "box, point, both"], || format!("{:?}", table.rows[1]))?;
    Ok(format!(
        "medians {:.1}/{:.1}/{:.1} ms; reference columns verbatim",
        r.model_init_ms, r.image_init_ms, r.mask_predict_ms
    ))
}

fn determinism_replay() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fx = SquareFixture::default();
    let video = tmp.path().join("v.gif");
    fx.write(&video).map_err(|e| e.to_string())?;
    let engines = Engines::with_defaults();
    let options = CreateOptions { session_id: Some("r".into()), name: None };
    let mut s = Session::create(tmp.path().join("live"), &video, LabelClass::from_names(&["sq"]), options)
        .map_err(|e| e.to_string())?;
    let rg = SegmenterConfig::named("region-grow");
    let ctl = TrackControl::new();
    s.prompt_frame(&engines, &rg, 0, &click(&fx, 0), &BTreeMap::from([(oid(1), 0)])).map_err(|e| e.to_string())?;
    s.track_segment(&engines, 0, &TrackerConfig::named("baseline-ncc"), TrackOptions::default(), &ctl)
        .map_err(|e| e.to_string())?;
    s.correct_and_resume(&engines, &rg, 20, &click(&fx, 20), &ctl).map_err(|e| e.to_string())?;
    let reopened = Session::open(s.dir()).map_err(|e| e.to_string())?;
    let replayed = reopened.replay(&engines, tmp.path().join("replay")).map_err(|e| e.to_string())?;
    let (a, b) = (s.snapshot().map_err(|e| e.to_string())?, replayed.snapshot().map_err(|e| e.to_string())?);
    ensure(a == b, || "replayed session differs".into())?;
    Ok(format!("{} events, {} files identical", s.history().len(), a.len()))
}

fn self_contained() -> Result<String, String> {
    ensure(std::env::var_os("TRACKMARK_PLUGIN").is_none(), || "a plugin command is configured".into())?;
    let crates = Path::new(env!("CARGO_MANIFEST_DIR")).join("..");
    let mut members: Vec<String> = std::fs::read_dir(&crates)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect();
    members.sort();
    ensure(members == ["core", "server"], || format!("workspace crates {members:?}"))?;
    let engines = Engines::with_defaults();
    for name in ["sam2", "fastsam"] {
        let err = engines.segmenters.init(&SegmenterConfig::named(name)).err().map(|e| e.code());
        ensure(err == Some(ErrorCode::LoadError), || format!("{name} loaded without weights"))?;
    }
    Ok("reference backends only, no weights".into())
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 7] = [
        ("YOLO round trip on all grids up to 64x64", yolo_round_trip),
        ("tracking oracle on the translating-square fixture", tracking_oracle),
        ("segmentation oracle on 50 random scenes", segmentation_oracle),
        ("correction semantics after drift injection", correction_semantics),
        ("export validity: fixture to annotate to export to validate", export_validity),
        ("benchmark harness and comparison table", benchmark_harness),
        ("determinism: replay reproduces persisted masks", determinism_replay),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in checks {
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(e) => {
                failed += 1;
                println!("FAIL  {name}: {e}");
            }
        }
    }
    let name = "all of the above without optional components or weights";
    match self_contained() {
        Ok(detail) if failed == 0 => println!("PASS  {name}: {detail}"),
        Ok(_) => {
            failed += 1;
            println!("FAIL  {name}: {failed} criteria failed");
        }
        Err(e) => {
            failed += 1;
            println!("FAIL  {name}: {e}");
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
