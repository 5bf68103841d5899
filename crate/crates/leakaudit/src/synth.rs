//! Deterministic synthetic plate generation for augmentation: sample a
//! plausible plate string, composite glyphs onto a blank template, then
//! distort with seeded perspective, shadow, HSV, and noise stages.
//!
//! Everything is reproducible: (template, pattern, config, seed) fully
//! determine the output bytes, and batch images derive independent
//! sub-seeds from (master seed, index) so generation order never matters.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{imageops, RgbImage};
use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{sample_bilinear, solve_homography, GeometryError};
use crate::model::{Point, Quad};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("unknown character class `{name}`")]
    UnknownClass { name: String },
    #[error("character class `{name}` is empty")]
    EmptyClass { name: String },
    #[error("empty pattern")]
    EmptyPattern,
    #[error("text has {got} characters, pattern expects {expected}")]
    TextLength { expected: usize, got: usize },
    #[error("character `{ch}` at position {position} is outside its class `{class}`")]
    TextClass {
        position: usize,
        ch: char,
        class: String,
    },
    #[error("glyph `{symbol}` missing from the atlas")]
    MissingGlyph { symbol: char },
    #[error("template has {boxes} boxes but the pattern has {pattern} positions")]
    BoxCount { boxes: usize, pattern: usize },
    #[error("box {index} exceeds the template bounds")]
    BoxOutOfBounds { index: usize },
    #[error("transform config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("config i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse: {0}")]
    Toml(String),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

/// One pattern position: the class name it came from and its symbols.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionClass {
    pub name: String,
    pub symbols: Vec<char>,
}

/// Built-in character classes. Letters exclude I and O, matching real
/// assignment policies, so sampled strings stay plausible.
pub fn builtin_classes() -> BTreeMap<String, Vec<char>> {
    let letters: Vec<char> = ('A'..='Z').filter(|c| *c != 'I' && *c != 'O').collect();
    let digits: Vec<char> = ('0'..='9').collect();
    let mut alnum = letters.clone();
    alnum.extend(&digits);
    BTreeMap::from([
        ("letter".to_string(), letters),
        ("digit".to_string(), digits),
        ("alnum".to_string(), alnum),
    ])
}

/// Parse a pattern string into positional classes.
///
/// Tokens are whitespace separated. `[name]` references a class, first from
/// the user's table and then from the built-ins (letter, digit, alnum). Any
/// other token is a literal: each of its characters becomes a singleton
/// position.
pub fn parse_pattern(
    pattern: &str,
    classes: &BTreeMap<String, String>,
) -> Result<Vec<PositionClass>, SynthError> {
    let builtins = builtin_classes();
    let mut out = Vec::new();
    for token in pattern.split_whitespace() {
        if let Some(name) = token.strip_prefix('[').and_then(|t| t.strip_suffix(']')) {
            let symbols: Vec<char> = match classes.get(name) {
                Some(s) => s.chars().collect(),
                None => builtins
                    .get(name)
                    .cloned()
                    .ok_or_else(|| SynthError::UnknownClass {
                        name: name.to_string(),
                    })?,
            };
            if symbols.is_empty() {
                return Err(SynthError::EmptyClass {
                    name: name.to_string(),
                });
            }
            out.push(PositionClass {
                name: format!("[{name}]"),
                symbols,
            });
        } else {
            for ch in token.chars() {
                out.push(PositionClass {
                    name: format!("literal `{ch}`"),
                    symbols: vec![ch],
                });
            }
        }
    }
    if out.is_empty() {
        return Err(SynthError::EmptyPattern);
    }
    Ok(out)
}

/// Draw one character per position, uniformly within its class.
pub fn sample_plate_text(
    pattern: &[PositionClass],
    rng: &mut ChaCha20Rng,
) -> Result<String, SynthError> {
    if pattern.is_empty() {
        return Err(SynthError::EmptyPattern);
    }
    let mut text = String::new();
    for class in pattern {
        if class.symbols.is_empty() {
            return Err(SynthError::EmptyClass {
                name: class.name.clone(),
            });
        }
        text.push(class.symbols[rng.gen_range(0..class.symbols.len())]);
    }
    Ok(text)
}

/// Axis-aligned character cell on the template.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

/// Blank plate raster plus character boxes, positional classes, and the
/// glyph atlas. Templates and atlases are user-supplied assets.
#[derive(Clone, Debug)]
pub struct PlateTemplate {
    pub base: RgbImage,
    pub boxes: Vec<CharBox>,
    pub pattern: Vec<PositionClass>,
    pub atlas: BTreeMap<char, RgbImage>,
}

impl PlateTemplate {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.boxes.len() != self.pattern.len() {
            return Err(SynthError::BoxCount {
                boxes: self.boxes.len(),
                pattern: self.pattern.len(),
            });
        }
        let (w, h) = (self.base.width(), self.base.height());
        for (index, b) in self.boxes.iter().enumerate() {
            if b.w == 0 || b.h == 0 || b.x + b.w > w || b.y + b.h > h {
                return Err(SynthError::BoxOutOfBounds { index });
            }
        }
        for class in &self.pattern {
            for &symbol in &class.symbols {
                if !self.atlas.contains_key(&symbol) {
                    return Err(SynthError::MissingGlyph { symbol });
                }
            }
        }
        Ok(())
    }
}

/// Composite the text's glyphs into their boxes, scaled to fit. Pixels
/// outside every box keep the template background.
pub fn render_plate(template: &PlateTemplate, text: &str) -> Result<RgbImage, SynthError> {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() != template.pattern.len() {
        return Err(SynthError::TextLength {
            expected: template.pattern.len(),
            got: chars.len(),
        });
    }
    for (position, (ch, class)) in chars.iter().zip(&template.pattern).enumerate() {
        if !class.symbols.contains(ch) {
            return Err(SynthError::TextClass {
                position,
                ch: *ch,
                class: class.name.clone(),
            });
        }
    }
    let mut out = template.base.clone();
    for (ch, b) in chars.iter().zip(&template.boxes) {
        let glyph = template
            .atlas
            .get(ch)
            .ok_or(SynthError::MissingGlyph { symbol: *ch })?;
        let scaled = if glyph.width() == b.w && glyph.height() == b.h {
            glyph.clone()
        } else {
            imageops::resize(glyph, b.w, b.h, imageops::FilterType::Triangle)
        };
        for (dx, dy, px) in scaled.enumerate_pixels() {
            out.put_pixel(b.x + dx, b.y + dy, *px);
        }
    }
    Ok(out)
}

/// Magnitudes and seed for the distortion stages. A stage with zero
/// magnitude is skipped outright, so the all-zero config is a pixel-exact
/// no-op.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformConfig {
    /// Corner jitter radius as a fraction of the plate dimensions.
    pub perspective_radius: f64,
    /// Gaussian noise sigma in intensity units.
    pub noise_sigma: f64,
    pub shadow_probability: f64,
    /// Uniform opacity range (lo, hi) in [0, 1]; the shadow multiplies
    /// brightness by 1 - opacity.
    pub shadow_opacity: (f64, f64),
    /// Hue shift range in degrees.
    pub hue_jitter: f64,
    /// Multiplicative saturation jitter range (fraction).
    pub saturation_jitter: f64,
    /// Multiplicative brightness jitter range (fraction).
    pub brightness_jitter: f64,
    pub seed: u64,
}

impl Default for TransformConfig {
    fn default() -> Self {
        TransformConfig {
            perspective_radius: 0.0,
            noise_sigma: 0.0,
            shadow_probability: 0.0,
            shadow_opacity: (0.0, 0.0),
            hue_jitter: 0.0,
            saturation_jitter: 0.0,
            brightness_jitter: 0.0,
            seed: 0,
        }
    }
}

impl TransformConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let nonneg = [
            ("perspective_radius", self.perspective_radius),
            ("noise_sigma", self.noise_sigma),
            ("hue_jitter", self.hue_jitter),
            ("saturation_jitter", self.saturation_jitter),
            ("brightness_jitter", self.brightness_jitter),
        ];
        for (name, v) in nonneg {
            if !v.is_finite() || v < 0.0 {
                return Err(SynthError::BadConfig(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.shadow_probability) {
            return Err(SynthError::BadConfig(format!(
                "shadow_probability must lie in [0, 1], got {}",
                self.shadow_probability
            )));
        }
        let (lo, hi) = self.shadow_opacity;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(SynthError::BadConfig(format!(
                "shadow_opacity must be an ordered range within [0, 1], got ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

/// Uniform draw symmetric around zero; zero range draws nothing.
fn sym_draw(rng: &mut ChaCha20Rng, range: f64) -> f64 {
    if range > 0.0 {
        rng.gen_range(-range..=range)
    } else {
        0.0
    }
}

/// Jitter the frame corners and warp the content onto them, edge-filling
/// uncovered pixels. Returns the warped raster and where the plate corners
/// landed, which a caller can check against the jitter radius.
pub fn perspective_jitter(
    img: &RgbImage,
    radius: f64,
    rng: &mut ChaCha20Rng,
) -> Result<(RgbImage, Quad), SynthError> {
    let w = f64::from(img.width());
    let h = f64::from(img.height());
    let frame: Quad = [
        Point::new(0.0, 0.0),
        Point::new(w, 0.0),
        Point::new(w, h),
        Point::new(0.0, h),
    ];
    let mut landed = frame;
    for corner in &mut landed {
        corner.x += sym_draw(rng, radius * w);
        corner.y += sym_draw(rng, radius * h);
    }
    // Pull each output pixel back through the map that sends the jittered
    // quad onto the original frame.
    let back = solve_homography(&landed, &frame)?;
    let mut out = RgbImage::new(img.width(), img.height());
    for y in 0..img.height() {
        for x in 0..img.width() {
            let p = back.apply(Point::new(f64::from(x) + 0.5, f64::from(y) + 0.5));
            let px = sample_bilinear(img, p.x - 0.5, p.y - 0.5);
            out.put_pixel(x, y, image::Rgb(px));
        }
    }
    Ok((out, landed))
}

/// Convex hull (Andrew monotone chain), counter-clockwise in a y-down
/// coordinate system.
fn convex_hull(mut points: Vec<Point>) -> Vec<Point> {
    points.sort_by(|a, b| a.x.total_cmp(&b.x).then_with(|| a.y.total_cmp(&b.y)));
    points.dedup_by(|a, b| a.x == b.x && a.y == b.y);
    if points.len() < 3 {
        return points;
    }
    let cross = |o: Point, a: Point, b: Point| {
        (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
    };
    let mut hull: Vec<Point> = Vec::new();
    for &p in points.iter().chain(points.iter().rev().skip(1)) {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

fn inside_hull(hull: &[Point], p: Point) -> bool {
    if hull.len() < 3 {
        return false;
    }
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        if (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) < 0.0 {
            return false;
        }
    }
    true
}

/// Darken a random convex polygon: multiply brightness inside it by
/// 1 - opacity.
fn shadow_stage(img: &mut RgbImage, cfg: &TransformConfig, rng: &mut ChaCha20Rng) {
    let happens: f64 = rng.gen();
    if happens >= cfg.shadow_probability {
        return;
    }
    let w = f64::from(img.width());
    let h = f64::from(img.height());
    let mut points = Vec::with_capacity(6);
    for _ in 0..6 {
        points.push(Point::new(rng.gen_range(0.0..w), rng.gen_range(0.0..h)));
    }
    let (lo, hi) = cfg.shadow_opacity;
    let opacity = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let hull = convex_hull(points);
    if hull.len() < 3 || opacity <= 0.0 {
        return;
    }
    let factor = 1.0 - opacity;
    for (x, y, px) in img.enumerate_pixels_mut() {
        let center = Point::new(f64::from(x) + 0.5, f64::from(y) + 0.5);
        if inside_hull(&hull, center) {
            for c in px.0.iter_mut() {
                *c = (f64::from(*c) * factor).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
}

fn rgb_to_hsv(r: u8, g: u8, b: u8) -> (f64, f64, f64) {
    let r = f64::from(r) / 255.0;
    let g = f64::from(g) / 255.0;
    let b = f64::from(b) / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * (((g - b) / delta).rem_euclid(6.0))
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (u8, u8, u8) {
    let h = h.rem_euclid(360.0);
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0).rem_euclid(2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h {
        h if h < 60.0 => (c, x, 0.0),
        h if h < 120.0 => (x, c, 0.0),
        h if h < 180.0 => (0.0, c, x),
        h if h < 240.0 => (0.0, x, c),
        h if h < 300.0 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let to_u8 = |v: f64| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    (to_u8(r), to_u8(g), to_u8(b))
}

/// One hue/saturation/brightness perturbation for the whole image.
fn hsv_stage(img: &mut RgbImage, cfg: &TransformConfig, rng: &mut ChaCha20Rng) {
    let dh = sym_draw(rng, cfg.hue_jitter);
    let ds = sym_draw(rng, cfg.saturation_jitter);
    let dv = sym_draw(rng, cfg.brightness_jitter);
    for px in img.pixels_mut() {
        let (h, s, v) = rgb_to_hsv(px.0[0], px.0[1], px.0[2]);
        let (r, g, b) = hsv_to_rgb(
            h + dh,
            (s * (1.0 + ds)).clamp(0.0, 1.0),
            (v * (1.0 + dv)).clamp(0.0, 1.0),
        );
        px.0 = [r, g, b];
    }
}

/// Additive Gaussian noise, drawn per channel in row-major order.
fn noise_stage(img: &mut RgbImage, sigma: f64, rng: &mut ChaCha20Rng) {
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    for px in img.pixels_mut() {
        for c in px.0.iter_mut() {
            let n: f64 = normal.sample(rng);
            *c = (f64::from(*c) + n).round().clamp(0.0, 255.0) as u8;
        }
    }
}

/// Apply the distortion stages in fixed order: perspective, shadow, HSV,
/// noise. Geometry first, photometry after, sensor noise last. Output
/// dimensions always equal input dimensions.
pub fn apply_transforms(img: &RgbImage, cfg: &TransformConfig) -> Result<RgbImage, SynthError> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    apply_transforms_rng(img, cfg, &mut rng)
}

/// Same as `apply_transforms`, parameterized by an external generator so a
/// batch can run one stream per image.
pub fn apply_transforms_rng(
    img: &RgbImage,
    cfg: &TransformConfig,
    rng: &mut ChaCha20Rng,
) -> Result<RgbImage, SynthError> {
    cfg.validate()?;
    let mut out;
    if cfg.perspective_radius > 0.0 {
        let (warped, _) = perspective_jitter(img, cfg.perspective_radius, rng)?;
        out = warped;
    } else {
        out = img.clone();
    }
    if cfg.shadow_probability > 0.0 {
        shadow_stage(&mut out, cfg, rng);
    }
    if cfg.hue_jitter > 0.0 || cfg.saturation_jitter > 0.0 || cfg.brightness_jitter > 0.0 {
        hsv_stage(&mut out, cfg, rng);
    }
    if cfg.noise_sigma > 0.0 {
        noise_stage(&mut out, cfg.noise_sigma, rng);
    }
    Ok(out)
}

/// Sub-seed for image `index` of a batch: master seed in bytes 0..8, index
/// in bytes 8..16, zero elsewhere. Independent per image, so batches can be
/// generated in any order or in parallel.
pub fn sub_seed(master_seed: u64, index: u64) -> [u8; 32] {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&master_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&index.to_le_bytes());
    seed
}

/// A full batch request.
#[derive(Clone, Debug)]
pub struct SynthJob {
    pub template: PlateTemplate,
    pub transform: TransformConfig,
    pub count: u64,
    pub master_seed: u64,
}

/// One generated image with its sampled text.
#[derive(Clone, Debug)]
pub struct GeneratedPlate {
    pub index: u64,
    pub text: String,
    pub image: RgbImage,
}

impl GeneratedPlate {
    /// Output filename, encoding index and plate text.
    pub fn filename(&self) -> String {
        format!("{:05}_{}.png", self.index, self.text)
    }
}

/// Generate the batch image at `index`: sample text, render, distort, all
/// from the image's own sub-seeded stream.
pub fn generate_one(job: &SynthJob, index: u64) -> Result<GeneratedPlate, SynthError> {
    job.template.validate()?;
    let mut rng = ChaCha20Rng::from_seed(sub_seed(job.master_seed, index));
    let text = sample_plate_text(&job.template.pattern, &mut rng)?;
    let rendered = render_plate(&job.template, &text)?;
    let image = apply_transforms_rng(&rendered, &job.transform, &mut rng)?;
    Ok(GeneratedPlate { index, text, image })
}

/// Transform ranges as written in the config file.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformFileConfig {
    pub perspective_radius: f64,
    pub noise_sigma: f64,
    pub shadow_probability: f64,
    pub shadow_opacity: (f64, f64),
    pub hue_jitter: f64,
    pub saturation_jitter: f64,
    pub brightness_jitter: f64,
}

/// Batch config file. Asset paths resolve relative to the config file's
/// directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfigFile {
    /// Blank plate raster path.
    pub template: String,
    /// Directory of glyph rasters: `<symbol>.png`, or `u<hex>.png` for
    /// symbols awkward in filenames.
    pub atlas_dir: String,
    pub pattern: String,
    pub count: u64,
    pub seed: u64,
    pub out_dir: String,
    /// Character boxes as (x, y, w, h), one per pattern position.
    pub boxes: Vec<(u32, u32, u32, u32)>,
    /// User character classes: name to symbol string.
    #[serde(default)]
    pub classes: BTreeMap<String, String>,
    #[serde(default)]
    pub transform: TransformFileConfig,
}

impl SynthConfigFile {
    pub fn from_toml_str(text: &str) -> Result<Self, SynthError> {
        toml::from_str(text).map_err(|e| SynthError::Toml(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Resolved output directory.
    pub fn out_dir(&self, config_dir: &Path) -> PathBuf {
        config_dir.join(&self.out_dir)
    }

    /// Load assets and assemble the batch job.
    pub fn into_job(&self, config_dir: &Path) -> Result<SynthJob, SynthError> {
        let pattern = parse_pattern(&self.pattern, &self.classes)?;
        let base = image::open(config_dir.join(&self.template))?.to_rgb8();
        let atlas_dir = config_dir.join(&self.atlas_dir);
        let mut atlas: BTreeMap<char, RgbImage> = BTreeMap::new();
        for class in &pattern {
            for &symbol in &class.symbols {
                if atlas.contains_key(&symbol) {
                    continue;
                }
                let named = atlas_dir.join(format!("{symbol}.png"));
                let coded = atlas_dir.join(format!("u{:04X}.png", symbol as u32));
                let path = if named.is_file() {
                    named
                } else if coded.is_file() {
                    coded
                } else {
                    return Err(SynthError::MissingGlyph { symbol });
                };
                atlas.insert(symbol, image::open(path)?.to_rgb8());
            }
        }
        let boxes = self
            .boxes
            .iter()
            .map(|&(x, y, w, h)| CharBox { x, y, w, h })
            .collect();
        let template = PlateTemplate {
            base,
            boxes,
            pattern,
            atlas,
        };
        template.validate()?;
        let t = &self.transform;
        let transform = TransformConfig {
            perspective_radius: t.perspective_radius,
            noise_sigma: t.noise_sigma,
            shadow_probability: t.shadow_probability,
            shadow_opacity: t.shadow_opacity,
            hue_jitter: t.hue_jitter,
            saturation_jitter: t.saturation_jitter,
            brightness_jitter: t.brightness_jitter,
            seed: self.seed,
        };
        transform.validate()?;
        Ok(SynthJob {
            template,
            transform,
            count: self.count,
            master_seed: self.seed,
        })
    }
}
