//! Homography, rectification, and pixel-distance tests.
//!
//! The linear solver is cross-checked against an independent Gauss-Jordan
//! elimination written here, and rectification against a crop-plus-resize
//! oracle that never goes near the homography code path.

mod common;

use common::rect_quad;
use image::{Rgb, RgbImage};
use leakaudit::geometry::{
    parse_canonical_size, pixel_distance, rectify, solve_homography, CanonicalPlate,
    GeometryError, Homography, DEFAULT_CANONICAL_SIZE,
};
use leakaudit::model::{Point, Quad};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Deterministic texture over an unbounded integer domain, so shifted crops
/// of "the same scene" can be synthesized exactly.
fn tex(x: i64, y: i64) -> Rgb<u8> {
    let v = x.wrapping_mul(1315423911).wrapping_add(y.wrapping_mul(2654435761));
    Rgb([
        (v.rem_euclid(251)) as u8,
        (v.wrapping_mul(7).rem_euclid(241)) as u8,
        (v.wrapping_mul(13).rem_euclid(233)) as u8,
    ])
}

fn textured_image(w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| tex(i64::from(x), i64::from(y)))
}

fn shifted_image(w: u32, h: u32, dx: i64, dy: i64) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| tex(i64::from(x) - dx, i64::from(y) - dy))
}

/// Jittered rectangle; the jitter is small against the rectangle so the quad
/// stays simple and far from collinear.
fn jittered_quad(rng: &mut ChaCha20Rng) -> Quad {
    let base = rect_quad(10.0, 10.0, 90.0, 60.0);
    let mut q = base;
    for p in &mut q {
        p.x += rng.gen_range(-8.0..8.0);
        p.y += rng.gen_range(-8.0..8.0);
    }
    q
}

/// Independent reduced-row-echelon solve of the 8 correspondence equations.
fn oracle_homography(src: &Quad, dst: &Quad) -> Option<[[f64; 3]; 3]> {
    let mut a = vec![vec![0.0f64; 9]; 8];
    for i in 0..4 {
        let (x, y) = (src[i].x, src[i].y);
        let (u, v) = (dst[i].x, dst[i].y);
        a[2 * i] = vec![x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * i + 1] = vec![0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    for col in 0..8 {
        let piv = (col..8).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        let d = a[col][col];
        for k in 0..9 {
            a[col][k] /= d;
        }
        for row in 0..8 {
            if row != col && a[row][col] != 0.0 {
                let f = a[row][col];
                for k in 0..9 {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    let h: Vec<f64> = (0..8).map(|i| a[i][8]).collect();
    Some([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])
}

#[test]
fn identity_correspondences_solve_to_identity() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    for _ in 0..20 {
        let q = jittered_quad(&mut rng);
        let h = solve_homography(&q, &q).unwrap();
        for (r, row) in h.matrix().iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-6, "entry ({r},{c}) = {v}");
            }
        }
    }
}

#[test]
fn doubling_the_unit_square_gives_a_pure_scale() {
    let src = rect_quad(0.0, 0.0, 1.0, 1.0);
    let dst = rect_quad(0.0, 0.0, 2.0, 2.0);
    let h = solve_homography(&src, &dst).unwrap();
    let want = [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]];
    for r in 0..3 {
        for c in 0..3 {
            assert!(
                (h.matrix()[r][c] - want[r][c]).abs() < 1e-9,
                "entry ({r},{c}) = {}",
                h.matrix()[r][c]
            );
        }
    }
}

#[test]
fn solver_matches_independent_elimination() {
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    for _ in 0..50 {
        let src = jittered_quad(&mut rng);
        let dst = jittered_quad(&mut rng);
        let h = solve_homography(&src, &dst).unwrap();
        let oracle = oracle_homography(&src, &dst).expect("oracle solvable");
        for r in 0..3 {
            for c in 0..3 {
                let got = h.matrix()[r][c];
                let want = oracle[r][c];
                assert!(
                    (got - want).abs() <= 1e-6 * (1.0 + want.abs()),
                    "entry ({r},{c}): got {got}, oracle {want}"
                );
            }
        }
    }
}

#[test]
fn solved_map_reproduces_all_four_correspondences() {
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    for _ in 0..50 {
        let src = jittered_quad(&mut rng);
        let dst = jittered_quad(&mut rng);
        let h = solve_homography(&src, &dst).unwrap();
        for i in 0..4 {
            let p = h.apply(src[i]);
            let err = ((p.x - dst[i].x).powi(2) + (p.y - dst[i].y).powi(2)).sqrt();
            assert!(err <= 1e-6, "corner {i} error {err}");
        }
    }
}

#[test]
fn collinear_source_corners_are_rejected() {
    let src = [
        Point::new(0.0, 0.0),
        Point::new(5.0, 0.0),
        Point::new(10.0, 0.0),
        Point::new(0.0, 10.0),
    ];
    let dst = rect_quad(0.0, 0.0, 10.0, 10.0);
    match solve_homography(&src, &dst) {
        Err(GeometryError::DegenerateQuad { which, .. }) => assert_eq!(which, "source"),
        other => panic!("expected DegenerateQuad, got {other:?}"),
    }
    match solve_homography(&dst, &src) {
        Err(GeometryError::DegenerateQuad { which, .. }) => assert_eq!(which, "destination"),
        other => panic!("expected DegenerateQuad, got {other:?}"),
    }
}

#[test]
fn composition_matches_sequential_application() {
    let mut rng = ChaCha20Rng::seed_from_u64(14);
    for _ in 0..30 {
        let qa = jittered_quad(&mut rng);
        let qb = jittered_quad(&mut rng);
        let qc = jittered_quad(&mut rng);
        let ab = solve_homography(&qa, &qb).unwrap();
        let bc = solve_homography(&qb, &qc).unwrap();
        let composed = bc.compose(&ab).unwrap();
        for _ in 0..8 {
            let p = Point::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..70.0));
            let direct = composed.apply(p);
            let chained = bc.apply(ab.apply(p));
            assert!((direct.x - chained.x).abs() < 1e-6);
            assert!((direct.y - chained.y).abs() < 1e-6);
        }
    }
}

#[test]
fn round_trip_composition_is_identity() {
    let mut rng = ChaCha20Rng::seed_from_u64(15);
    let qa = jittered_quad(&mut rng);
    let qb = jittered_quad(&mut rng);
    let fwd = solve_homography(&qa, &qb).unwrap();
    let back = solve_homography(&qb, &qa).unwrap();
    let id = back.compose(&fwd).unwrap();
    for _ in 0..16 {
        let p = Point::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..70.0));
        let q = id.apply(p);
        assert!((q.x - p.x).abs() < 1e-5);
        assert!((q.y - p.y).abs() < 1e-5);
    }
}

#[test]
fn from_matrix_normalizes_the_projective_scale() {
    let h = Homography::from_matrix([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]]).unwrap();
    assert_eq!(h.matrix()[2][2], 1.0);
    let p = h.apply(Point::new(3.0, 4.0));
    assert!((p.x - 3.0).abs() < 1e-12 && (p.y - 4.0).abs() < 1e-12);
}

#[test]
fn rectify_full_frame_is_an_exact_copy() {
    let img = textured_image(40, 20);
    let corners = rect_quad(0.0, 0.0, 40.0, 20.0);
    let plate = rectify(&img, &corners, (40, 20)).unwrap();
    assert_eq!(plate.pixels(), img.as_raw().as_slice());
}

/// Independent bilinear sampler in pixel-index coordinates with edge clamp.
fn bilinear_oracle(img: &RgbImage, u: f64, v: f64) -> [u8; 3] {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (uf, vf) = (u.floor(), v.floor());
    let (fx, fy) = (u - uf, v - vf);
    let grab = |x: i64, y: i64| -> [u8; 3] {
        img.get_pixel(x.clamp(0, w - 1) as u32, y.clamp(0, h - 1) as u32).0
    };
    let (x0, y0) = (uf as i64, vf as i64);
    let (p00, p10, p01, p11) = (grab(x0, y0), grab(x0 + 1, y0), grab(x0, y0 + 1), grab(x0 + 1, y0 + 1));
    let mut out = [0u8; 3];
    for c in 0..3 {
        let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
        let bot = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
        out[c] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Crop-resize oracle: axis-aligned crop mapped with centered sample grids.
fn crop_resize_oracle(
    img: &RgbImage,
    x0: f64,
    y0: f64,
    crop_w: f64,
    crop_h: f64,
    out_w: u32,
    out_h: u32,
) -> Vec<u8> {
    let mut out = Vec::new();
    for j in 0..out_h {
        for i in 0..out_w {
            let u = x0 + (f64::from(i) + 0.5) * crop_w / f64::from(out_w) - 0.5;
            let v = y0 + (f64::from(j) + 0.5) * crop_h / f64::from(out_h) - 0.5;
            out.extend_from_slice(&bilinear_oracle(img, u, v));
        }
    }
    out
}

#[test]
fn rectify_axis_aligned_crop_matches_crop_resize_oracle() {
    let img = textured_image(64, 32);
    let corners = rect_quad(8.0, 4.0, 56.0, 28.0);
    for (ow, oh) in [(24u32, 12u32), (48, 24), (16, 8)] {
        let plate = rectify(&img, &corners, (ow, oh)).unwrap();
        let oracle = crop_resize_oracle(&img, 8.0, 4.0, 48.0, 24.0, ow, oh);
        assert_eq!(plate.pixels().len(), oracle.len());
        for (k, (&got, &want)) in plate.pixels().iter().zip(&oracle).enumerate() {
            let diff = (i16::from(got) - i16::from(want)).abs();
            assert!(diff <= 1, "byte {k} at {ow}x{oh}: got {got}, oracle {want}");
        }
    }
}

#[test]
fn rectify_is_translation_equivariant() {
    let (dx, dy) = (7i64, 5i64);
    let img_a = textured_image(200, 100);
    let img_b = shifted_image(200, 100, dx, dy);
    let mut rng = ChaCha20Rng::seed_from_u64(16);
    for _ in 0..10 {
        let qa = jittered_quad(&mut rng);
        let qb: Quad = std::array::from_fn(|i| {
            Point::new(qa[i].x + dx as f64, qa[i].y + dy as f64)
        });
        let pa = rectify(&img_a, &qa, DEFAULT_CANONICAL_SIZE).unwrap();
        let pb = rectify(&img_b, &qb, DEFAULT_CANONICAL_SIZE).unwrap();
        for (k, (&a, &b)) in pa.pixels().iter().zip(pb.pixels()).enumerate() {
            let diff = (i16::from(a) - i16::from(b)).abs();
            assert!(diff <= 1, "byte {k}: {a} vs {b}");
        }
    }
}

#[test]
fn rectify_clamps_outside_samples_to_the_border() {
    let mut img = RgbImage::new(1, 1);
    img.put_pixel(0, 0, Rgb([100, 150, 200]));
    // Upscaling a single pixel: every sample clamps onto it.
    let plate = rectify(&img, &rect_quad(0.0, 0.0, 1.0, 1.0), (3, 2)).unwrap();
    for px in plate.pixels().chunks(3) {
        assert_eq!(px, [100, 150, 200]);
    }
}

#[test]
fn rectify_rejects_degenerate_corners() {
    let img = textured_image(32, 16);
    let corners = [
        Point::new(0.0, 0.0),
        Point::new(10.0, 0.0),
        Point::new(20.0, 0.0),
        Point::new(0.0, 10.0),
    ];
    assert!(matches!(
        rectify(&img, &corners, (8, 4)),
        Err(GeometryError::DegenerateQuad { .. })
    ));
}

#[test]
fn rectify_rejects_zero_canonical_size() {
    let img = textured_image(32, 16);
    assert!(matches!(
        rectify(&img, &rect_quad(1.0, 1.0, 30.0, 15.0), (0, 4)),
        Err(GeometryError::BadCanonicalSize { .. })
    ));
}

fn plate_from_bytes(w: u32, h: u32, bytes: Vec<u8>) -> CanonicalPlate {
    CanonicalPlate::new(w, h, bytes).unwrap()
}

#[test]
fn pixel_distance_hand_oracle() {
    // Differences 3, 4, 12 across the buffer: sqrt(9 + 16 + 144) = 13.
    let a = plate_from_bytes(2, 1, vec![10, 20, 30, 40, 50, 60]);
    let b = plate_from_bytes(2, 1, vec![13, 20, 30, 44, 50, 48]);
    assert_eq!(pixel_distance(&a, &b).unwrap(), 13.0);
}

#[test]
fn pixel_distance_is_a_metric_on_random_rasters() {
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let mut random_plate = |rng: &mut ChaCha20Rng| {
        let bytes: Vec<u8> = (0..4 * 2 * 3).map(|_| rng.gen()).collect();
        plate_from_bytes(4, 2, bytes)
    };
    for _ in 0..1000 {
        let a = random_plate(&mut rng);
        let b = random_plate(&mut rng);
        let c = random_plate(&mut rng);
        let dab = pixel_distance(&a, &b).unwrap();
        let dba = pixel_distance(&b, &a).unwrap();
        let dac = pixel_distance(&a, &c).unwrap();
        let dbc = pixel_distance(&b, &c).unwrap();
        assert_eq!(dab, dba);
        assert_eq!(pixel_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(dab == 0.0, a.pixels() == b.pixels());
        assert!(dac <= dab + dbc + 1e-9, "triangle: {dac} > {dab} + {dbc}");
        assert!(dab >= 0.0);
    }
}

#[test]
fn pixel_distance_rejects_mismatched_sizes() {
    let a = plate_from_bytes(2, 1, vec![0; 6]);
    let b = plate_from_bytes(1, 2, vec![0; 6]);
    assert!(matches!(
        pixel_distance(&a, &b),
        Err(GeometryError::DimensionMismatch { .. })
    ));
}

#[test]
fn canonical_plate_validates_buffer_length() {
    assert!(matches!(
        CanonicalPlate::new(2, 2, vec![0; 5]),
        Err(GeometryError::BadBuffer { .. })
    ));
    assert!(matches!(
        CanonicalPlate::new(0, 2, vec![]),
        Err(GeometryError::BadCanonicalSize { .. })
    ));
}

#[test]
fn canonical_plate_image_round_trip() {
    let img = textured_image(12, 6);
    let plate = CanonicalPlate::from_image(&img).unwrap();
    assert_eq!(plate.to_image(), img);
    assert_eq!(plate.get(3, 2), img.get_pixel(3, 2).0);
}

#[test]
fn canonical_size_string_parses() {
    assert_eq!(parse_canonical_size("96x48"), Some((96, 48)));
    assert_eq!(parse_canonical_size("128X64"), Some((128, 64)));
    assert_eq!(parse_canonical_size(" 96 x 48 "), Some((96, 48)));
    assert_eq!(parse_canonical_size("0x48"), None);
    assert_eq!(parse_canonical_size("96"), None);
    assert_eq!(parse_canonical_size("axb"), None);
}
