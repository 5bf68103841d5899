//! Plate rectification via 4-point homography and pixel-space distance
//! between rectified plates.
//!
//! All operations are pure functions over immutable inputs. Sampling uses a
//! half-pixel-center convention: output pixel (i, j) is sampled at
//! (i + 0.5, j + 0.5), which makes a full-frame identity warp copy the input
//! exactly.

use image::RgbImage;
use thiserror::Error;

use crate::model::{collinear_triple, quad_degeneracy, Point, Quad};

/// Default rectified plate size (width, height). Close to the aspect ratio
/// of both Taiwanese and mainland plates and small enough that all-pairs
/// distances over large duplicate sets stay cheap.
pub const DEFAULT_CANONICAL_SIZE: (u32, u32) = (96, 48);

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("degenerate {which} quad: {reason}")]
    DegenerateQuad { which: &'static str, reason: String },
    #[error("homography system is singular")]
    Singular,
    #[error("homography verification failed: corner {index} lands {error:.3e} px off")]
    Verification { index: usize, error: f64 },
    #[error("plate dimension mismatch: {a_w}x{a_h} vs {b_w}x{b_h}")]
    DimensionMismatch {
        a_w: u32,
        a_h: u32,
        b_w: u32,
        b_h: u32,
    },
    #[error("canonical size must be positive, got {w}x{h}")]
    BadCanonicalSize { w: u32, h: u32 },
    #[error("pixel buffer of {got} bytes does not match {w}x{h}x3")]
    BadBuffer { got: usize, w: u32, h: u32 },
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

/// 3x3 projective map with the bottom-right element normalized to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl Homography {
    pub fn identity() -> Self {
        Homography {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Build from a raw matrix, normalizing so m[2][2] = 1.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self, GeometryError> {
        let w = m[2][2];
        if !w.is_finite() || w.abs() < 1e-12 {
            return Err(GeometryError::Singular);
        }
        let mut n = m;
        for row in &mut n {
            for v in row.iter_mut() {
                *v /= w;
            }
        }
        Ok(Homography { m: n })
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    /// Map a point through the homography, including perspective division.
    pub fn apply(&self, p: Point) -> Point {
        let m = &self.m;
        let x = m[0][0] * p.x + m[0][1] * p.y + m[0][2];
        let y = m[1][0] * p.x + m[1][1] * p.y + m[1][2];
        let w = m[2][0] * p.x + m[2][1] * p.y + m[2][2];
        Point::new(x / w, y / w)
    }

    /// Composition: (a.compose(b)).apply(p) equals a.apply(b.apply(p)).
    pub fn compose(&self, other: &Homography) -> Result<Homography, GeometryError> {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        Homography::from_matrix(m)
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }
}

fn check_not_collinear(q: &Quad, which: &'static str) -> Result<(), GeometryError> {
    if let Some((i, j, k)) = collinear_triple(q) {
        return Err(GeometryError::DegenerateQuad {
            which,
            reason: format!("corners {i}, {j}, {k} are collinear"),
        });
    }
    Ok(())
}

/// Solve an 8x8 linear system in place via Gaussian elimination with
/// partial pivoting. `a` is the augmented matrix, one extra column for the
/// right-hand side.
fn solve_8x8(a: &mut [[f64; 9]; 8]) -> Result<[f64; 8], GeometryError> {
    let scale: f64 = a
        .iter()
        .flat_map(|row| row.iter().take(8))
        .fold(0.0, |acc, v| acc.max(v.abs()));
    let eps = 1e-12 * (1.0 + scale);
    for col in 0..8 {
        let pivot_row = (col..8)
            .max_by(|&r1, &r2| a[r1][col].abs().total_cmp(&a[r2][col].abs()))
            .expect("non-empty range");
        if a[pivot_row][col].abs() < eps {
            return Err(GeometryError::Singular);
        }
        a.swap(col, pivot_row);
        for row in (col + 1)..8 {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..9 {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    let mut x = [0.0; 8];
    for row in (0..8).rev() {
        let mut acc = a[row][8];
        for col in (row + 1)..8 {
            acc -= a[row][col] * x[col];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

/// Solve the homography mapping each `src` corner onto the matching `dst`
/// corner. Four exact correspondences pin down the eight unknowns directly,
/// so this is a plain linear solve, no least squares involved.
pub fn solve_homography(src: &Quad, dst: &Quad) -> Result<Homography, GeometryError> {
    check_not_collinear(src, "source")?;
    check_not_collinear(dst, "destination")?;

    let mut a = [[0.0; 9]; 8];
    for i in 0..4 {
        let (x, y) = (src[i].x, src[i].y);
        let (u, v) = (dst[i].x, dst[i].y);
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    let h = solve_8x8(&mut a)?;
    let hom = Homography {
        m: [[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]],
    };
    if hom.det().abs() < 1e-9 {
        return Err(GeometryError::Singular);
    }
    // The solved map must reproduce the four correspondences to high
    // precision; anything worse signals an ill-conditioned system.
    for i in 0..4 {
        let p = hom.apply(src[i]);
        let err = ((p.x - dst[i].x).powi(2) + (p.y - dst[i].y).powi(2)).sqrt();
        if !(err <= 1e-6) {
            return Err(GeometryError::Verification { index: i, error: err });
        }
    }
    Ok(hom)
}

/// A plate rectified to the canonical size: row-major RGB bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalPlate {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl CanonicalPlate {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::BadCanonicalSize {
                w: width,
                h: height,
            });
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(GeometryError::BadBuffer {
                got: pixels.len(),
                w: width,
                h: height,
            });
        }
        Ok(CanonicalPlate {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn from_image(img: &RgbImage) -> Result<Self, GeometryError> {
        CanonicalPlate::new(img.width(), img.height(), img.as_raw().clone())
    }

    pub fn to_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("buffer length validated at construction")
    }
}

/// Bilinear sample with edge clamping, in pixel-index coordinates (so (0, 0)
/// is the center of the top-left pixel). Out-of-range samples caused by
/// noisy corner annotations clamp to the border rather than failing.
pub(crate) fn sample_bilinear(img: &RgbImage, u: f64, v: f64) -> [u8; 3] {
    let w = img.width() as i64;
    let h = img.height() as i64;
    let u = if u.is_finite() { u } else { 0.0 };
    let v = if v.is_finite() { v } else { 0.0 };
    let uf = u.clamp(-1e9, 1e9).floor();
    let vf = v.clamp(-1e9, 1e9).floor();
    let fx = u - uf;
    let fy = v - vf;
    let x0 = (uf as i64).clamp(0, w - 1);
    let x1 = (uf as i64 + 1).clamp(0, w - 1);
    let y0 = (vf as i64).clamp(0, h - 1);
    let y1 = (vf as i64 + 1).clamp(0, h - 1);
    let p00 = img.get_pixel(x0 as u32, y0 as u32).0;
    let p10 = img.get_pixel(x1 as u32, y0 as u32).0;
    let p01 = img.get_pixel(x0 as u32, y1 as u32).0;
    let p11 = img.get_pixel(x1 as u32, y1 as u32).0;
    let mut out = [0u8; 3];
    for c in 0..3 {
        let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
        let bot = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
        out[c] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Inverse-warp the annotated plate quad onto the canonical rectangle.
///
/// The homography maps canonical corners to the source corners; every output
/// pixel center is pulled back through it and bilinearly sampled with edge
/// clamping.
pub fn rectify(
    image: &RgbImage,
    corners: &Quad,
    canonical_size: (u32, u32),
) -> Result<CanonicalPlate, GeometryError> {
    let (cw, ch) = canonical_size;
    if cw == 0 || ch == 0 {
        return Err(GeometryError::BadCanonicalSize { w: cw, h: ch });
    }
    if let Some(reason) = quad_degeneracy(corners) {
        return Err(GeometryError::DegenerateQuad {
            which: "source",
            reason,
        });
    }
    let canonical: Quad = [
        Point::new(0.0, 0.0),
        Point::new(f64::from(cw), 0.0),
        Point::new(f64::from(cw), f64::from(ch)),
        Point::new(0.0, f64::from(ch)),
    ];
    let back = solve_homography(&canonical, corners)?;
    let mut pixels = Vec::with_capacity(cw as usize * ch as usize * 3);
    for y in 0..ch {
        for x in 0..cw {
            let p = back.apply(Point::new(f64::from(x) + 0.5, f64::from(y) + 0.5));
            pixels.extend_from_slice(&sample_bilinear(image, p.x - 0.5, p.y - 0.5));
        }
    }
    CanonicalPlate::new(cw, ch, pixels)
}

/// Euclidean distance in pixel space: the square root of the summed squared
/// channel differences over all pixels, in double precision.
pub fn pixel_distance(a: &CanonicalPlate, b: &CanonicalPlate) -> Result<f64, GeometryError> {
    if a.width != b.width || a.height != b.height {
        return Err(GeometryError::DimensionMismatch {
            a_w: a.width,
            a_h: a.height,
            b_w: b.width,
            b_h: b.height,
        });
    }
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    Ok(sum.sqrt())
}

/// Decode an image file into an RGB raster.
pub fn load_rgb(path: &std::path::Path) -> Result<RgbImage, GeometryError> {
    Ok(image::open(path)?.to_rgb8())
}

/// Parse a "WxH" canonical-size string.
pub fn parse_canonical_size(s: &str) -> Option<(u32, u32)> {
    let (w, h) = s.split_once(['x', 'X'])?;
    let w: u32 = w.trim().parse().ok()?;
    let h: u32 = h.trim().parse().ok()?;
    if w == 0 || h == 0 {
        None
    } else {
        Some((w, h))
    }
}
