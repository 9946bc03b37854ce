//! YOLO dataset export, validation and zip packaging.
//!
//! Layout below the destination:
//!
//! ```text
//! classes.txt                    one class name per line, line i = class i
//! images/<stem>_<frame:06>.jpg
//! labels/<stem>_<frame:06>.txt   `class cx cy w h` per object, 6 decimals
//! manifest.json                  ExportManifest
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::ErrorCode;
use crate::mask::{bbox_to_yolo, mask_to_bbox, YoloBox};
use crate::scalar::Rational;
use crate::session::{LabelClass, Session, SessionError};

pub const CLASSES_FILE: &str = "classes.txt";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMAGES_DIR: &str = "images";
pub const LABELS_DIR: &str = "labels";

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("{0}")]
    Export(String),
    #[error("cannot write {path}: {reason}")]
    Write { path: String, reason: String },
    #[error(transparent)]
    Session(#[from] SessionError),
}

impl ExportError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ExportError::Export(_) => ErrorCode::ExportError,
            ExportError::Write { .. } => ErrorCode::WriteError,
            ExportError::Session(e) => e.code(),
        }
    }
}

fn write_err(path: &Path, e: impl ToString) -> ExportError {
    ExportError::Write { path: path.display().to_string(), reason: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFrame {
    pub frame: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub image_count: usize,
    pub label_count: usize,
    pub classes: Vec<LabelClass>,
    pub frames: Vec<u32>,
    pub skipped_frames: Vec<SkippedFrame>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportOptions {
    /// File stem; the session name when unset.
    pub stem: Option<String>,
    pub jpeg_quality: u8,
}

impl Default for ExportOptions {
    fn default() -> Self {
        ExportOptions { stem: None, jpeg_quality: 95 }
    }
}

pub fn file_stem(stem: &str, frame: u32) -> String {
    format!("{stem}_{frame:06}")
}

/// Label file contents for one frame, objects in id order. `None` when no
/// object is visible.
pub fn label_lines(session: &Session, mask: &crate::mask::MaskMap) -> Result<Option<String>, ExportError> {
    let visible = mask.visible_objects();
    if visible.is_empty() {
        return Ok(None);
    }
    let mut out = String::new();
    for id in visible {
        let class_id = session
            .class_of(id)
            .ok_or_else(|| ExportError::Export(format!("object {id} has no class")))?;
        let bbox = mask_to_bbox(mask, id).map_err(|e| ExportError::Export(e.to_string()))?;
        let yolo = bbox_to_yolo::<Rational>(&bbox, mask.width(), mask.height(), class_id)
            .map_err(|e| ExportError::Export(e.to_string()))?;
        out.push_str(&yolo.to_line());
        out.push('\n');
    }
    Ok(Some(out))
}

/// Writes the dataset into `destination`, which must be absent or empty.
pub fn export_yolo(
    session: &Session,
    destination: impl AsRef<Path>,
    options: &ExportOptions,
) -> Result<ExportManifest, ExportError> {
    let dest = destination.as_ref();
    let masks = session.masks()?;
    if masks.is_empty() {
        return Err(ExportError::Export("session has no tracked frames".into()));
    }
    if dest.exists() {
        let mut entries = fs::read_dir(dest).map_err(|e| write_err(dest, e))?;
        if entries.next().is_some() {
            return Err(ExportError::Export(format!("destination {} is not empty", dest.display())));
        }
    }
    let stem = options.stem.clone().unwrap_or_else(|| session.state().name.clone());
    if stem.is_empty() || stem.contains(['/', '\\']) {
        return Err(ExportError::Export(format!("invalid file stem `{stem}`")));
    }

    let mut labels = BTreeMap::new();
    let mut skipped_frames = Vec::new();
    for (&frame, mask) in &masks {
        match label_lines(session, mask)? {
            Some(text) => {
                labels.insert(frame, text);
            }
            None => skipped_frames.push(SkippedFrame { frame, reason: "no visible objects".into() }),
        }
    }
    if labels.is_empty() {
        return Err(ExportError::Export("no tracked frame has a visible object".into()));
    }

    let images_dir = dest.join(IMAGES_DIR);
    let labels_dir = dest.join(LABELS_DIR);
    for d in [&images_dir, &labels_dir] {
        fs::create_dir_all(d).map_err(|e| write_err(d, e))?;
    }
    let classes = session.classes().to_vec();
    let class_text: String = classes.iter().map(|c| format!("{}\n", c.name)).collect();
    let classes_path = dest.join(CLASSES_FILE);
    fs::write(&classes_path, class_text).map_err(|e| write_err(&classes_path, e))?;

    let frames: Vec<u32> = labels.keys().copied().collect();
    let decoded = session.video().frames_at(&frames).map_err(SessionError::from)?;
    for ((&frame, text), pixels) in labels.iter().zip(&decoded) {
        let name = file_stem(&stem, frame);
        let label_path = labels_dir.join(format!("{name}.txt"));
        fs::write(&label_path, text).map_err(|e| write_err(&label_path, e))?;
        let image_path = images_dir.join(format!("{name}.jpg"));
        let file = File::create(&image_path).map_err(|e| write_err(&image_path, e))?;
        let mut writer = io::BufWriter::new(file);
        image::codecs::jpeg::JpegEncoder::new_with_quality(&mut writer, options.jpeg_quality)
            .encode_image(&pixels.pixels)
            .map_err(|e| write_err(&image_path, e))?;
        writer.flush().map_err(|e| write_err(&image_path, e))?;
    }

    let manifest = ExportManifest {
        image_count: frames.len(),
        label_count: frames.len(),
        classes,
        frames,
        skipped_frames,
    };
    let manifest_path = dest.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest is serializable");
    json.push('\n');
    fs::write(&manifest_path, json).map_err(|e| write_err(&manifest_path, e))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Path relative to the dataset root.
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub class_count: usize,
    pub image_count: usize,
    pub label_count: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn flag(&mut self, file: &str, line: Option<usize>, message: impl Into<String>) {
        self.violations.push(Violation { file: file.into(), line, message: message.into() });
    }
}

fn stems(dir: &Path, ext: &str) -> io::Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == ext) {
            if let Some(s) = path.file_stem() {
                out.insert(s.to_string_lossy().into_owned());
            }
        }
    }
    Ok(out)
}

fn is_fixed6(field: &str) -> bool {
    let Some((int, frac)) = field.split_once('.') else {
        return false;
    };
    !int.is_empty() && int.bytes().all(|b| b.is_ascii_digit()) && frac.len() == 6 && frac.bytes().all(|b| b.is_ascii_digit())
}

/// Checks a YOLO layout; every problem found becomes a violation.
pub fn validate_yolo(root: impl AsRef<Path>) -> ValidationReport {
    let root = root.as_ref();
    let mut report = ValidationReport::default();

    match fs::read_to_string(root.join(CLASSES_FILE)) {
        Err(e) => report.flag(CLASSES_FILE, None, format!("unreadable: {e}")),
        Ok(text) => {
            let names: Vec<&str> = text.lines().collect();
            if names.is_empty() {
                report.flag(CLASSES_FILE, None, "no classes");
            }
            for (i, n) in names.iter().enumerate() {
                if n.trim().is_empty() {
                    report.flag(CLASSES_FILE, Some(i + 1), "empty class name");
                }
            }
            report.class_count = names.len();
        }
    }

    let images = stems(&root.join(IMAGES_DIR), "jpg");
    let labels = stems(&root.join(LABELS_DIR), "txt");
    let (images, labels) = match (images, labels) {
        (Ok(i), Ok(l)) => (i, l),
        (i, l) => {
            if let Err(e) = i {
                report.flag(IMAGES_DIR, None, format!("unreadable: {e}"));
            }
            if let Err(e) = l {
                report.flag(LABELS_DIR, None, format!("unreadable: {e}"));
            }
            return report;
        }
    };
    report.image_count = images.len();
    report.label_count = labels.len();
    if images.is_empty() {
        report.flag(IMAGES_DIR, None, "no images");
    }
    for s in images.difference(&labels) {
        report.flag(&format!("{IMAGES_DIR}/{s}.jpg"), None, "image without label file");
    }
    for s in labels.difference(&images) {
        report.flag(&format!("{LABELS_DIR}/{s}.txt"), None, "label file without image");
    }

    for s in &labels {
        let rel = format!("{LABELS_DIR}/{s}.txt");
        let text = match fs::read_to_string(root.join(&rel)) {
            Ok(t) => t,
            Err(e) => {
                report.flag(&rel, None, format!("unreadable: {e}"));
                continue;
            }
        };
        if text.is_empty() {
            report.flag(&rel, None, "empty label file");
            continue;
        }
        if !text.ends_with('\n') {
            report.flag(&rel, None, "missing final newline");
        }
        for (i, line) in text.lines().enumerate() {
            let n = Some(i + 1);
            let fields: Vec<&str> = line.split(' ').collect();
            if fields.len() != 5 || !fields[1..].iter().all(|f| is_fixed6(f)) {
                report.flag(&rel, n, format!("malformed line `{line}`"));
                continue;
            }
            let Some(yolo) = YoloBox::<Rational>::parse_line(line) else {
                report.flag(&rel, n, format!("malformed line `{line}`"));
                continue;
            };
            if yolo.class_id as usize >= report.class_count {
                report.flag(&rel, n, format!("class {} not below class count {}", yolo.class_id, report.class_count));
            }
            if let Err(e) = yolo.check_bounds() {
                report.flag(&rel, n, e.to_string());
            }
        }
    }
    report
}

fn relative_files(root: &Path) -> io::Result<Vec<(String, PathBuf)>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, PathBuf)>) -> io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("below root");
                let name = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                out.push((name, path));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, root, &mut out)?;
    out.sort();
    Ok(out)
}

/// Zips a valid export into `<dir>.zip` next to it, entries in path order.
pub fn package_archive(exported: impl AsRef<Path>) -> Result<PathBuf, ExportError> {
    let dir = exported.as_ref();
    for (sub, what) in [(LABELS_DIR, "labels"), (IMAGES_DIR, "images")] {
        if !dir.join(sub).is_dir() {
            return Err(ExportError::Export(format!("missing {what}/ directory")));
        }
    }
    let report = validate_yolo(dir);
    if let Some(v) = report.violations.first() {
        return Err(ExportError::Export(format!(
            "invalid layout ({} violations), first: {}: {}",
            report.violations.len(),
            v.file,
            v.message
        )));
    }
    let archive = dir.with_extension("zip");
    let files = relative_files(dir).map_err(|e| ExportError::Export(e.to_string()))?;
    let file = File::create(&archive).map_err(|e| write_err(&archive, e))?;
    let mut zip = zip::ZipWriter::new(io::BufWriter::new(file));
    let options = zip::write::SimpleFileOptions::default().compression_method(zip::CompressionMethod::Deflated);
    for (name, path) in files {
        zip.start_file(name, options).map_err(|e| write_err(&archive, e))?;
        let bytes = fs::read(&path).map_err(|e| ExportError::Export(e.to_string()))?;
        zip.write_all(&bytes).map_err(|e| write_err(&archive, e))?;
    }
    zip.finish().map_err(|e| write_err(&archive, e))?;
    Ok(archive)
}
