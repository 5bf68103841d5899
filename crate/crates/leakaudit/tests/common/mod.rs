//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use leakaudit::model::{Charmaps, ImageEntry, Manifest, Point, Quad};

/// Synthetic charmaps for tests: 4 province glyphs, the full A-Z letter
/// table, and a 34-symbol alphanumeric table (letters minus I and O, then
/// digits). Index 22 is Y, 24 maps to 0, 33 to 9.
pub fn charmaps() -> Charmaps {
    let letters: Vec<String> = ('A'..='Z').map(|c| c.to_string()).collect();
    let mut alnum: Vec<String> = ('A'..='Z')
        .filter(|c| *c != 'I' && *c != 'O')
        .map(|c| c.to_string())
        .collect();
    alnum.extend(('0'..='9').map(|c| c.to_string()));
    Charmaps {
        province: ["皖", "沪", "津", "渝"].map(str::to_string).to_vec(),
        letters,
        alnum,
    }
}

/// Minimal valid entry: no corners, no bbox, 200x100 frame.
pub fn entry(id: &str, dataset: &str, subset: &str, plate: &str) -> ImageEntry {
    ImageEntry {
        id: id.to_string(),
        dataset_id: dataset.to_string(),
        subset: subset.to_string(),
        plate_text: plate.to_string(),
        corners: None,
        bbox: None,
        image_width: 200,
        image_height: 100,
    }
}

pub fn manifest(dataset: &str, entries: Vec<ImageEntry>) -> Manifest {
    Manifest::from_entries(dataset, entries).expect("fixture manifest is valid")
}

/// Axis-aligned rectangle as a TL, TR, BR, BL quad.
pub fn rect_quad(x0: f64, y0: f64, x1: f64, y1: f64) -> Quad {
    [
        Point::new(x0, y0),
        Point::new(x1, y0),
        Point::new(x1, y1),
        Point::new(x0, y1),
    ]
}
