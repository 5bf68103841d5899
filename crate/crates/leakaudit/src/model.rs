//! Core data model: manifests, plate-string normalization, and the CCPD
//! filename grammar.
//!
//! A manifest is line-delimited JSON, one image record per line. Records are
//! dataset-neutral; dataset-specific ingestion (such as CCPD filename
//! decoding) is adapted into this schema up front so every downstream module
//! speaks a single format.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while parsing or validating manifests, plate strings,
/// charmaps, and CCPD filenames.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("manifest i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("duplicate image id `{id}`")]
    DuplicateId { id: String },
    #[error("manifest mixes dataset ids `{first}` and `{other}`")]
    MixedDatasetId { first: String, other: String },
    #[error("entry `{id}`: {reason}")]
    Entry { id: String, reason: String },
    #[error("plate `{raw}`: empty after normalization")]
    EmptyPlate { raw: String },
    #[error("plate `{raw}`: unsupported character `{ch}`")]
    UnsupportedChar { raw: String, ch: char },
    #[error("CCPD filename `{name}`: expected 7 '-'-separated fields, found {got}")]
    CcpdFieldCount { name: String, got: usize },
    #[error("CCPD field `{field}`: malformed token `{token}`")]
    CcpdField { field: &'static str, token: String },
    #[error(
        "char index {index} at position {position} is outside the {table} table ({len} entries)"
    )]
    IndexOutOfRange {
        position: usize,
        index: usize,
        table: &'static str,
        len: usize,
    },
    #[error("empty plate index list")]
    EmptyIndices,
    #[error("plate index list has {got} entries, expected 7 (or 8 for green-style plates)")]
    IndexCount { got: usize },
    #[error("8-character plate indices are only valid for green-style entries")]
    EightCharsNotGreen,
    #[error("charmap table `{table}` is empty")]
    EmptyCharmapTable { table: &'static str },
    #[error("charmap config: {0}")]
    CharmapConfig(String),
}

/// A point in image pixel coordinates, y growing downward.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// Ordered corner quad: top-left, top-right, bottom-right, bottom-left.
pub type Quad = [Point; 4];

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Doubled signed area of the triangle (a, b, c).
pub(crate) fn triangle_area_x2(a: Point, b: Point, c: Point) -> f64 {
    cross(a, b, c)
}

/// Area of the quad's axis-aligned bounding box; scales degeneracy tolerances.
pub(crate) fn quad_bbox_area(q: &Quad) -> f64 {
    let xs = q.iter().map(|p| p.x);
    let ys = q.iter().map(|p| p.y);
    let (min_x, max_x) = min_max(xs);
    let (min_y, max_y) = min_max(ys);
    (max_x - min_x) * (max_y - min_y)
}

fn min_max(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in vals {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// True when segments (a, b) and (c, d) properly cross each other.
fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = cross(a, b, c);
    let d2 = cross(a, b, d);
    let d3 = cross(c, d, a);
    let d4 = cross(c, d, b);
    (d1 * d2 < 0.0) && (d3 * d4 < 0.0)
}

/// Indices of a collinear corner triple, if any. Tolerance is relative to the
/// quad's bounding-box area so the test is scale invariant.
pub(crate) fn collinear_triple(q: &Quad) -> Option<(usize, usize, usize)> {
    let tol = 1e-9 * quad_bbox_area(q);
    const TRIPLES: [(usize, usize, usize); 4] = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)];
    TRIPLES
        .into_iter()
        .find(|&(i, j, k)| triangle_area_x2(q[i], q[j], q[k]).abs() <= tol)
}

fn shoelace_area(q: &Quad) -> f64 {
    let mut s = 0.0;
    for i in 0..4 {
        let a = q[i];
        let b = q[(i + 1) % 4];
        s += a.x * b.y - b.x * a.y;
    }
    s / 2.0
}

/// Reason the quad violates the simple-quadrilateral invariants, if any.
pub(crate) fn quad_degeneracy(q: &Quad) -> Option<String> {
    if let Some((i, j, k)) = collinear_triple(q) {
        return Some(format!("corners {i}, {j}, {k} are collinear"));
    }
    let tol = 1e-9 * quad_bbox_area(q);
    if shoelace_area(q).abs() <= tol {
        return Some("zero enclosed area".to_string());
    }
    if segments_cross(q[0], q[1], q[2], q[3]) || segments_cross(q[1], q[2], q[3], q[0]) {
        return Some("edges cross (self-intersecting quad)".to_string());
    }
    None
}

/// Normalized plate string: uppercase Latin letters, decimal digits, and CJK
/// ideographs only. This is the identity under which near-duplicates are
/// grouped: two images are near-duplicates exactly when their keys match.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlateKey(String);

impl PlateKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PlateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn is_cjk(c: char) -> bool {
    matches!(c,
        '\u{4E00}'..='\u{9FFF}' | '\u{3400}'..='\u{4DBF}' | '\u{F900}'..='\u{FAFF}')
}

/// Normalize a raw plate string into its grouping key.
///
/// Latin letters are uppercased; separators (hyphen, middle dot, underscore,
/// whitespace) are dropped; CJK ideographs pass through unchanged. Any other
/// character is rejected. Idempotent: normalizing a key returns it verbatim.
pub fn normalize_plate(raw: &str) -> Result<PlateKey, ModelError> {
    let mut value = String::new();
    for c in raw.chars() {
        if c.is_whitespace() || matches!(c, '-' | '_' | '\u{00B7}') {
            continue;
        }
        let up = c.to_ascii_uppercase();
        if up.is_ascii_uppercase() || up.is_ascii_digit() || is_cjk(up) {
            value.push(up);
        } else {
            return Err(ModelError::UnsupportedChar {
                raw: raw.to_string(),
                ch: c,
            });
        }
    }
    if value.is_empty() {
        return Err(ModelError::EmptyPlate {
            raw: raw.to_string(),
        });
    }
    Ok(PlateKey(value))
}

/// One annotated dataset image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageEntry {
    /// Stable unique id, conventionally the image's relative file path.
    pub id: String,
    pub dataset_id: String,
    /// Subset tag, e.g. "AC", "LE", "RP", "Base", "Green-train".
    pub subset: String,
    /// Raw plate label as annotated; normalized on demand.
    pub plate_text: String,
    /// Plate corner quad (TL, TR, BR, BL), when annotated.
    pub corners: Option<Quad>,
    /// Axis-aligned plate box as (x0, y0, x1, y1), when annotated.
    pub bbox: Option<[f64; 4]>,
    pub image_width: u32,
    pub image_height: u32,
}

impl ImageEntry {
    /// Grouping key of this entry. Entries held by a validated manifest
    /// always normalize cleanly.
    pub fn plate_key(&self) -> Result<PlateKey, ModelError> {
        normalize_plate(&self.plate_text)
    }

    /// Check every per-entry invariant, returning the first violation.
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |reason: String| ModelError::Entry {
            id: self.id.clone(),
            reason,
        };
        if self.id.is_empty() {
            return Err(fail("empty id".into()));
        }
        if self.dataset_id.is_empty() {
            return Err(fail("empty dataset_id".into()));
        }
        if self.plate_text.trim().is_empty() {
            return Err(fail("plate_text empty after trimming".into()));
        }
        normalize_plate(&self.plate_text).map_err(|e| fail(e.to_string()))?;
        if self.image_width == 0 || self.image_height == 0 {
            return Err(fail(format!(
                "non-positive image size {}x{}",
                self.image_width, self.image_height
            )));
        }
        let w = f64::from(self.image_width);
        let h = f64::from(self.image_height);
        if let Some(q) = &self.corners {
            for (i, p) in q.iter().enumerate() {
                if !(p.x.is_finite() && p.y.is_finite()) {
                    return Err(fail(format!("corner {i} is not finite")));
                }
                if p.x < 0.0 || p.x > w || p.y < 0.0 || p.y > h {
                    return Err(fail(format!(
                        "corner {i} ({}, {}) outside image bounds {w}x{h}",
                        p.x, p.y
                    )));
                }
            }
            if let Some(reason) = quad_degeneracy(q) {
                return Err(fail(format!("corner quad: {reason}")));
            }
        }
        if let Some([x0, y0, x1, y1]) = self.bbox {
            if !(x0.is_finite() && y0.is_finite() && x1.is_finite() && y1.is_finite()) {
                return Err(fail("bbox is not finite".into()));
            }
            if x0 > x1 || y0 > y1 {
                return Err(fail(format!("bbox ({x0}, {y0}, {x1}, {y1}) is inverted")));
            }
            if x0 < 0.0 || y0 < 0.0 || x1 > w || y1 > h {
                return Err(fail(format!(
                    "bbox ({x0}, {y0}, {x1}, {y1}) outside image bounds {w}x{h}"
                )));
            }
        }
        Ok(())
    }
}

/// Named alphabets for index-coded plate labels. Always loaded from
/// configuration: table contents vary by dataset release and are not baked
/// into the tool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Charmaps {
    /// Province glyph table, indexed by the first plate position.
    pub province: Vec<String>,
    /// Letter table, indexed by the second plate position.
    pub letters: Vec<String>,
    /// Alphanumeric table for the remaining positions.
    pub alnum: Vec<String>,
}

impl Charmaps {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, table) in [
            ("province", &self.province),
            ("letters", &self.letters),
            ("alnum", &self.alnum),
        ] {
            if table.is_empty() {
                return Err(ModelError::EmptyCharmapTable { table: name });
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ModelError> {
        let maps: Charmaps =
            toml::from_str(text).map_err(|e| ModelError::CharmapConfig(e.to_string()))?;
        maps.validate()?;
        Ok(maps)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Table consulted for a given plate position.
    pub fn table_for(&self, position: usize) -> (&'static str, &[String]) {
        match position {
            0 => ("province", &self.province),
            1 => ("letters", &self.letters),
            _ => ("alnum", &self.alnum),
        }
    }
}

/// Decode an index-coded plate label into its normalized key.
///
/// Position 0 consults the province table, position 1 the letter table, and
/// every later position the alphanumeric table. Lists of length 8 are only
/// accepted for green-style entries (green plates carry eight characters).
pub fn decode_plate_indices(
    indices: &[usize],
    maps: &Charmaps,
    green_style: bool,
) -> Result<PlateKey, ModelError> {
    maps.validate()?;
    if indices.is_empty() {
        return Err(ModelError::EmptyIndices);
    }
    match indices.len() {
        7 => {}
        8 if green_style => {}
        8 => return Err(ModelError::EightCharsNotGreen),
        n => return Err(ModelError::IndexCount { got: n }),
    }
    let mut raw = String::new();
    for (position, &index) in indices.iter().enumerate() {
        let (table_name, table) = maps.table_for(position);
        let symbol = table.get(index).ok_or(ModelError::IndexOutOfRange {
            position,
            index,
            table: table_name,
            len: table.len(),
        })?;
        raw.push_str(symbol);
    }
    normalize_plate(&raw)
}

/// Per-image annotations carried by a CCPD-style filename.
#[derive(Clone, Debug, PartialEq)]
pub struct CcpdRecord {
    pub area_ratio: f64,
    /// (horizontal, vertical) tilt in degrees.
    pub tilt: (f64, f64),
    /// Axis-aligned plate box: top-left then bottom-right point.
    pub bbox: [Point; 2],
    /// Vertices exactly as stored in the filename: bottom-right first,
    /// counter-clockwise (BR, BL, TL, TR).
    pub vertices: [Point; 4],
    pub char_indices: Vec<usize>,
    pub brightness: i64,
    pub blurriness: i64,
}

impl CcpdRecord {
    /// Corner quad re-ordered to the manifest convention (TL, TR, BR, BL).
    pub fn corners(&self) -> Quad {
        [
            self.vertices[2],
            self.vertices[3],
            self.vertices[0],
            self.vertices[1],
        ]
    }

    /// Decode the plate label through the charmaps.
    pub fn plate_key(&self, maps: &Charmaps, green_style: bool) -> Result<PlateKey, ModelError> {
        decode_plate_indices(&self.char_indices, maps, green_style)
    }
}

fn digits_u64(field: &'static str, token: &str) -> Result<u64, ModelError> {
    if token.is_empty() || !token.bytes().all(|b| b.is_ascii_digit()) {
        return Err(ModelError::CcpdField {
            field,
            token: token.to_string(),
        });
    }
    token.parse().map_err(|_| ModelError::CcpdField {
        field,
        token: token.to_string(),
    })
}

fn point_token(field: &'static str, token: &str) -> Result<Point, ModelError> {
    let mut it = token.split('&');
    let (x, y) = match (it.next(), it.next(), it.next()) {
        (Some(x), Some(y), None) => (x, y),
        _ => {
            return Err(ModelError::CcpdField {
                field,
                token: token.to_string(),
            })
        }
    };
    Ok(Point::new(
        digits_u64(field, x)? as f64,
        digits_u64(field, y)? as f64,
    ))
}

/// Parse a CCPD-style base filename into its seven annotation fields.
///
/// Grammar: seven '-'-separated fields in the order area, tilt, bbox,
/// vertices, char indices, brightness, blurriness; '_' separates values
/// inside a field and '&' separates the x and y of a point. All tokens are
/// unsigned decimal digit runs. A trailing extension is ignored. The area
/// field stores the digits of the decimal fraction, so "025" means 0.025.
pub fn parse_ccpd_filename(name: &str, maps: &Charmaps) -> Result<CcpdRecord, ModelError> {
    maps.validate()?;
    let stem = name.split('.').next().unwrap_or("");
    let fields: Vec<&str> = stem.split('-').collect();
    if fields.len() != 7 {
        return Err(ModelError::CcpdFieldCount {
            name: name.to_string(),
            got: fields.len(),
        });
    }

    let area_digits = fields[0];
    if area_digits.is_empty() || !area_digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(ModelError::CcpdField {
            field: "area",
            token: area_digits.to_string(),
        });
    }
    let area_ratio: f64 = format!("0.{area_digits}")
        .parse()
        .expect("digit run forms a valid decimal fraction");

    let tilt_tokens: Vec<&str> = fields[1].split('_').collect();
    if tilt_tokens.len() != 2 {
        return Err(ModelError::CcpdField {
            field: "tilt",
            token: fields[1].to_string(),
        });
    }
    let tilt = (
        digits_u64("tilt", tilt_tokens[0])? as f64,
        digits_u64("tilt", tilt_tokens[1])? as f64,
    );

    let bbox_tokens: Vec<&str> = fields[2].split('_').collect();
    if bbox_tokens.len() != 2 {
        return Err(ModelError::CcpdField {
            field: "bbox",
            token: fields[2].to_string(),
        });
    }
    let bbox = [
        point_token("bbox", bbox_tokens[0])?,
        point_token("bbox", bbox_tokens[1])?,
    ];

    let vertex_tokens: Vec<&str> = fields[3].split('_').collect();
    if vertex_tokens.len() != 4 {
        return Err(ModelError::CcpdField {
            field: "vertices",
            token: fields[3].to_string(),
        });
    }
    let mut vertices = [Point::new(0.0, 0.0); 4];
    for (i, tok) in vertex_tokens.iter().enumerate() {
        vertices[i] = point_token("vertices", tok)?;
    }

    let mut char_indices = Vec::new();
    for tok in fields[4].split('_') {
        char_indices.push(digits_u64("char_indices", tok)? as usize);
    }
    if !(char_indices.len() == 7 || char_indices.len() == 8) {
        return Err(ModelError::IndexCount {
            got: char_indices.len(),
        });
    }
    for (position, &index) in char_indices.iter().enumerate() {
        let (table_name, table) = maps.table_for(position);
        if index >= table.len() {
            return Err(ModelError::IndexOutOfRange {
                position,
                index,
                table: table_name,
                len: table.len(),
            });
        }
    }

    let brightness = digits_u64("brightness", fields[5])? as i64;
    let blurriness = digits_u64("blurriness", fields[6])? as i64;

    Ok(CcpdRecord {
        area_ratio,
        tilt,
        bbox,
        vertices,
        char_indices,
        brightness,
        blurriness,
    })
}

/// Build a manifest entry from a CCPD-style relative path.
///
/// The filename (last path component) carries the annotations; the full path
/// is kept as the entry id. Subsets whose tag starts with "Green" may carry
/// eight-character plates.
pub fn ccpd_image_entry(
    path: &str,
    dataset_id: &str,
    subset: &str,
    image_width: u32,
    image_height: u32,
    maps: &Charmaps,
) -> Result<ImageEntry, ModelError> {
    let base = path.rsplit('/').next().unwrap_or(path);
    let record = parse_ccpd_filename(base, maps)?;
    let green_style = subset.starts_with("Green");
    let key = record.plate_key(maps, green_style)?;
    let entry = ImageEntry {
        id: path.to_string(),
        dataset_id: dataset_id.to_string(),
        subset: subset.to_string(),
        plate_text: key.as_str().to_string(),
        corners: Some(record.corners()),
        bbox: Some([
            record.bbox[0].x,
            record.bbox[0].y,
            record.bbox[1].x,
            record.bbox[1].y,
        ]),
        image_width,
        image_height,
    };
    entry.validate()?;
    Ok(entry)
}

/// Dataset id used for manifests parsed from an empty stream.
pub const EMPTY_DATASET_ID: &str = "unspecified";

/// An ordered, validated collection of image entries for one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub dataset_id: String,
    pub entries: Vec<ImageEntry>,
    /// Alphabets for index-coded labels, when the dataset uses them.
    pub charmaps: Option<Charmaps>,
}

/// On-disk record shape: one JSON object per manifest line. Corner and bbox
/// coordinates are stored flat (x1, y1, ..., x4, y4) and (x0, y0, x1, y1).
#[derive(Serialize, Deserialize)]
struct RawRecord {
    id: String,
    dataset_id: String,
    subset: String,
    plate_text: String,
    image_width: u32,
    image_height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    corners: Option<[f64; 8]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox: Option<[f64; 4]>,
}

impl From<&ImageEntry> for RawRecord {
    fn from(e: &ImageEntry) -> Self {
        RawRecord {
            id: e.id.clone(),
            dataset_id: e.dataset_id.clone(),
            subset: e.subset.clone(),
            plate_text: e.plate_text.clone(),
            image_width: e.image_width,
            image_height: e.image_height,
            corners: e.corners.map(|q| {
                [
                    q[0].x, q[0].y, q[1].x, q[1].y, q[2].x, q[2].y, q[3].x, q[3].y,
                ]
            }),
            bbox: e.bbox,
        }
    }
}

impl From<RawRecord> for ImageEntry {
    fn from(r: RawRecord) -> Self {
        ImageEntry {
            id: r.id,
            dataset_id: r.dataset_id,
            subset: r.subset,
            plate_text: r.plate_text,
            corners: r.corners.map(|c| {
                [
                    Point::new(c[0], c[1]),
                    Point::new(c[2], c[3]),
                    Point::new(c[4], c[5]),
                    Point::new(c[6], c[7]),
                ]
            }),
            bbox: r.bbox,
            image_width: r.image_width,
            image_height: r.image_height,
        }
    }
}

impl Manifest {
    /// Assemble and validate a manifest from already-built entries. Every
    /// entry must carry the given dataset id and a unique entry id.
    pub fn from_entries(
        dataset_id: &str,
        entries: Vec<ImageEntry>,
    ) -> Result<Manifest, ModelError> {
        if dataset_id.is_empty() {
            return Err(ModelError::CharmapConfig(
                "dataset_id must be non-empty".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for entry in &entries {
            entry.validate()?;
            if entry.dataset_id != dataset_id {
                return Err(ModelError::MixedDatasetId {
                    first: dataset_id.to_string(),
                    other: entry.dataset_id.clone(),
                });
            }
            if !seen.insert(entry.id.clone()) {
                return Err(ModelError::DuplicateId {
                    id: entry.id.clone(),
                });
            }
        }
        Ok(Manifest {
            dataset_id: dataset_id.to_string(),
            entries,
            charmaps: None,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn get(&self, id: &str) -> Option<&ImageEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Serialize back to line-delimited JSON, one record per entry in order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            let record = RawRecord::from(entry);
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Parse a line-delimited JSON manifest. Blank lines are ignored; entry
/// order is preserved; every invariant is validated. Errors carry the
/// 1-based line number of the offending record.
pub fn parse_manifest(text: &str) -> Result<Manifest, ModelError> {
    let mut entries: Vec<ImageEntry> = Vec::new();
    let mut dataset_id: Option<String> = None;
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord = serde_json::from_str(line).map_err(|e| ModelError::Line {
            line: line_no,
            message: e.to_string(),
        })?;
        let entry = ImageEntry::from(record);
        entry.validate().map_err(|e| ModelError::Line {
            line: line_no,
            message: e.to_string(),
        })?;
        match &dataset_id {
            None => dataset_id = Some(entry.dataset_id.clone()),
            Some(first) if *first != entry.dataset_id => {
                return Err(ModelError::MixedDatasetId {
                    first: first.clone(),
                    other: entry.dataset_id.clone(),
                });
            }
            Some(_) => {}
        }
        if !seen.insert(entry.id.clone()) {
            return Err(ModelError::DuplicateId { id: entry.id });
        }
        entries.push(entry);
    }
    Ok(Manifest {
        dataset_id: dataset_id.unwrap_or_else(|| EMPTY_DATASET_ID.to_string()),
        entries,
        charmaps: None,
    })
}

/// Read and parse a manifest file.
pub fn load_manifest(path: &Path) -> Result<Manifest, ModelError> {
    parse_manifest(&std::fs::read_to_string(path)?)
}
