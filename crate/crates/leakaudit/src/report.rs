//! Report emission: audit documents, split file sets, and the static
//! duplicate-pair gallery.
//!
//! Split files are byte-deterministic (no timestamps, ordered containers),
//! so re-running a split overwrites with identical bytes. Audit documents
//! carry a generation timestamp and round-trip through their JSON form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audit::{LeakageReport, OverlapPair};
use crate::geometry::CanonicalPlate;
use crate::split::{Role, SplitAssignment, VerificationReport};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report i/o at `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("report serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image encoding: {0}")]
    Image(#[from] image::ImageError),
    #[error("unknown report format `{0}` (expected json or table)")]
    UnknownFormat(String),
    #[error("split sidecar counts disagree with the list files: {0}")]
    SidecarMismatch(String),
    #[error("id `{id}` appears in more than one split file")]
    DuplicateSplitId { id: String },
    #[error("split directory is missing `{name}`")]
    MissingSplitFile { name: String },
}

fn io_err(path: &Path, source: std::io::Error) -> ReportError {
    ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Percent with one decimal, rounded half away from zero, computed in
/// integer arithmetic from the counts: 320 of 683 formats as "46.9%".
pub fn format_percent(count: usize, total: usize) -> String {
    if total == 0 {
        return "n/a".to_string();
    }
    let tenths = (1000 * count as u128 + total as u128 / 2) / total as u128;
    format!("{}.{}%", tenths / 10, tenths % 10)
}

/// The fraction presentation used throughout: "320/683 (46.9%)".
pub fn format_count_fraction(count: usize, total: usize) -> String {
    format!("{count}/{total} ({})", format_percent(count, total))
}

/// Round to one decimal, half away from zero.
pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Round to two decimals, half away from zero.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Content digest of an input file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

impl InputDigest {
    /// Hash the exact bytes of the file at `path`.
    pub fn of_file(path: &Path) -> Result<Self, ReportError> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let mut sha256 = String::with_capacity(64);
        for byte in hasher.finalize() {
            let _ = write!(sha256, "{byte:02x}");
        }
        Ok(InputDigest {
            path: path.display().to_string(),
            sha256,
        })
    }
}

/// Cross-dataset overlap findings between two manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapSection {
    pub dataset_a: String,
    pub dataset_b: String,
    pub threshold: Option<f64>,
    pub pairs: Vec<OverlapPair>,
}

/// Top-level audit artifact: inputs, one leakage report per audited split,
/// and optionally a cross-dataset overlap section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditDocument {
    pub tool_version: String,
    pub generated_at: String,
    pub inputs: Vec<InputDigest>,
    pub reports: Vec<LeakageReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap: Option<OverlapSection>,
}

impl AuditDocument {
    pub fn new() -> Self {
        let generated_at = time::OffsetDateTime::now_utc()
            .format(&time::format_description::well_known::Rfc3339)
            .unwrap_or_else(|_| "unknown".to_string());
        AuditDocument {
            tool_version: crate::TOOL_VERSION.to_string(),
            generated_at,
            inputs: Vec::new(),
            reports: Vec::new(),
            overlap: None,
        }
    }

    /// Parse the JSON form back into a document.
    pub fn parse(text: &str) -> Result<Self, ReportError> {
        Ok(serde_json::from_str(text)?)
    }
}

impl Default for AuditDocument {
    fn default() -> Self {
        Self::new()
    }
}

/// Output encodings for audit documents.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum AuditFormat {
    Json,
    Table,
}

impl std::str::FromStr for AuditFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(AuditFormat::Json),
            "table" => Ok(AuditFormat::Table),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }
}

/// Serialize the document. The JSON form is stable-keyed and re-parses to
/// an equal value; the table form mirrors the count/percent presentation of
/// the audit findings.
pub fn emit_audit(doc: &AuditDocument, format: AuditFormat) -> Result<Vec<u8>, ReportError> {
    match format {
        AuditFormat::Json => {
            let mut bytes = serde_json::to_vec_pretty(doc)?;
            bytes.push(b'\n');
            Ok(bytes)
        }
        AuditFormat::Table => {
            let mut out = String::new();
            let _ = writeln!(
                out,
                "leakage audit (tool {} at {})",
                doc.tool_version, doc.generated_at
            );
            for input in &doc.inputs {
                let _ = writeln!(out, "input: {} sha256={}", input.path, input.sha256);
            }
            for report in &doc.reports {
                let _ = writeln!(out);
                let _ = writeln!(
                    out,
                    "split {}: test leakage {}",
                    report.split_name,
                    format_count_fraction(report.n_test_leaked, report.n_test)
                );
                let _ = writeln!(
                    out,
                    "  roles: train {}, val {}, test {}",
                    report.n_train, report.n_val, report.n_test
                );
                let _ = writeln!(
                    out,
                    "  val/train plate overlap (not counted): {}",
                    report.n_val_overlap
                );
                let hist: Vec<String> = report
                    .group_size_histogram
                    .iter()
                    .map(|(size, images)| format!("{size}:{images}"))
                    .collect();
                let _ = writeln!(out, "  group sizes (size:images): {}", hist.join(" "));
                for pair in &report.percentile_pairs {
                    let _ = writeln!(
                        out,
                        "  p{:.0}: train={} test={} distance={:.2}",
                        pair.percentile, pair.train_id, pair.test_id, pair.distance
                    );
                }
            }
            if let Some(section) = &doc.overlap {
                let _ = writeln!(out);
                let _ = writeln!(
                    out,
                    "cross-dataset overlap {} vs {} ({} pairs)",
                    section.dataset_a,
                    section.dataset_b,
                    section.pairs.len()
                );
                for pair in &section.pairs {
                    let distance = match pair.distance {
                        Some(d) => format!("{:.2}", d),
                        None => "-".to_string(),
                    };
                    let _ = writeln!(
                        out,
                        "  {:?} {} {} {} distance={}",
                        pair.tier, pair.key, pair.id_a, pair.id_b, distance
                    );
                }
            }
            Ok(out.into_bytes())
        }
    }
}

/// Write bytes atomically: temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| "out".to_string());
    let tmp = dir.join(format!(".{file_name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Sidecar carried next to the split list files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSidecar {
    pub protocol: String,
    pub seed: u64,
    pub counts: BTreeMap<Role, usize>,
    pub excluded: Vec<String>,
    pub notes: Vec<String>,
    pub tool_version: String,
}

const SIDECAR_NAME: &str = "meta.json";

/// Emit train.txt, val.txt, test.txt (sorted ids, one per line) plus the
/// meta.json sidecar. Identical assignments produce byte-identical files.
pub fn emit_split_files(assignment: &SplitAssignment, dir: &Path) -> Result<(), ReportError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for role in Role::ALL {
        let mut body = String::new();
        for id in assignment.ids_with_role(role) {
            body.push_str(id);
            body.push('\n');
        }
        write_atomic(&dir.join(format!("{role}.txt")), body.as_bytes())?;
    }
    let sidecar = SplitSidecar {
        protocol: assignment.protocol.clone(),
        seed: assignment.seed,
        counts: assignment.counts.clone(),
        excluded: assignment.excluded.clone(),
        notes: assignment.notes.clone(),
        tool_version: crate::TOOL_VERSION.to_string(),
    };
    let mut bytes = serde_json::to_vec_pretty(&sidecar)?;
    bytes.push(b'\n');
    write_atomic(&dir.join(SIDECAR_NAME), &bytes)
}

/// Load a split directory back into an assignment, checking the sidecar
/// counts against the list files.
pub fn load_split_dir(dir: &Path) -> Result<SplitAssignment, ReportError> {
    let sidecar_path = dir.join(SIDECAR_NAME);
    if !sidecar_path.is_file() {
        return Err(ReportError::MissingSplitFile {
            name: SIDECAR_NAME.to_string(),
        });
    }
    let sidecar: SplitSidecar = serde_json::from_str(
        &fs::read_to_string(&sidecar_path).map_err(|e| io_err(&sidecar_path, e))?,
    )?;
    let mut roles: BTreeMap<String, Role> = BTreeMap::new();
    for role in Role::ALL {
        let name = format!("{role}.txt");
        let path = dir.join(&name);
        if !path.is_file() {
            return Err(ReportError::MissingSplitFile { name });
        }
        let body = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        for line in body.lines() {
            if line.is_empty() {
                continue;
            }
            if roles.insert(line.to_string(), role).is_some() {
                return Err(ReportError::DuplicateSplitId {
                    id: line.to_string(),
                });
            }
        }
    }
    let assignment = SplitAssignment::new(
        &sidecar.protocol,
        sidecar.seed,
        roles,
        sidecar.excluded,
        sidecar.notes,
    );
    if assignment.counts != sidecar.counts {
        return Err(ReportError::SidecarMismatch(format!(
            "sidecar {:?}, files {:?}",
            sidecar.counts, assignment.counts
        )));
    }
    Ok(assignment)
}

/// Render a verification report as plain text, one line per check.
pub fn format_verification(report: &VerificationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "verification of `{}`: {}",
        report.protocol,
        if report.passed() { "PASS" } else { "FAIL" }
    );
    for c in &report.checks {
        let _ = writeln!(
            out,
            "  [{}] {}: {}",
            if c.passed { "ok" } else { "FAIL" },
            c.name,
            c.detail
        );
        for offender in &c.offenders {
            let _ = writeln!(out, "      - {offender}");
        }
    }
    out
}

/// One gallery block: a selected percentile pair with both rectified
/// plates.
pub struct GalleryPair {
    pub label: String,
    pub percentile: f64,
    pub train_id: String,
    pub test_id: String,
    pub distance: f64,
    pub train_plate: CanonicalPlate,
    pub test_plate: CanonicalPlate,
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Emit a static gallery page showing each pair side by side, in the given
/// order, plus the plate images as PNG files. No scripts, no dynamic
/// behavior.
pub fn emit_gallery(pairs: &[GalleryPair], dir: &Path) -> Result<(), ReportError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut html = String::new();
    html.push_str("<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n");
    html.push_str("<title>duplicate pair gallery</title>\n");
    html.push_str(
        "<style>body{font-family:sans-serif}figure{display:inline-block;margin:1em}\
         img{image-rendering:pixelated;width:192px;border:1px solid #888}</style>\n",
    );
    html.push_str("</head>\n<body>\n<h1>duplicate pair gallery</h1>\n");
    if pairs.is_empty() {
        html.push_str("<p>no duplicates found</p>\n");
    }
    for (i, pair) in pairs.iter().enumerate() {
        let train_png = format!("pair{i:02}_train.png");
        let test_png = format!("pair{i:02}_test.png");
        save_plate_png(&pair.train_plate, &dir.join(&train_png))?;
        save_plate_png(&pair.test_plate, &dir.join(&test_png))?;
        let _ = writeln!(html, "<section class=\"pair\">");
        let _ = writeln!(
            html,
            "<h2>{} (distance {:.2})</h2>",
            html_escape(&pair.label),
            pair.distance
        );
        let _ = writeln!(
            html,
            "<figure><img src=\"{train_png}\" alt=\"train plate\">\
             <figcaption>train: {}</figcaption></figure>",
            html_escape(&pair.train_id)
        );
        let _ = writeln!(
            html,
            "<figure><img src=\"{test_png}\" alt=\"test plate\">\
             <figcaption>test: {}</figcaption></figure>",
            html_escape(&pair.test_id)
        );
        let _ = writeln!(html, "</section>");
    }
    html.push_str("</body>\n</html>\n");
    write_atomic(&dir.join("index.html"), html.as_bytes())
}

fn save_plate_png(plate: &CanonicalPlate, path: &Path) -> Result<(), ReportError> {
    let mut bytes: Vec<u8> = Vec::new();
    let img = plate.to_image();
    img.write_to(
        &mut std::io::Cursor::new(&mut bytes),
        image::ImageFormat::Png,
    )?;
    write_atomic(path, &bytes)
}
