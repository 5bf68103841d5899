//! Manifest, plate-normalization, and CCPD filename grammar tests.
//!
//! Decode expectations are computed by an independent table lookup inside the
//! test rather than by re-calling the code under test.

mod common;

use common::{charmaps, entry, manifest, rect_quad};
use leakaudit::model::{
    decode_plate_indices, normalize_plate, parse_ccpd_filename, parse_manifest, Manifest,
    ModelError, Point, EMPTY_DATASET_ID,
};
use proptest::prelude::*;

#[test]
fn normalize_strips_separators() {
    assert_eq!(normalize_plate("AB-1234").unwrap().as_str(), "AB1234");
    assert_eq!(normalize_plate("AB_12 34").unwrap().as_str(), "AB1234");
}

#[test]
fn normalize_uppercases_latin() {
    assert_eq!(normalize_plate("ab1234").unwrap().as_str(), "AB1234");
}

#[test]
fn normalize_keeps_cjk_and_drops_middle_dot() {
    assert_eq!(normalize_plate("皖A·12345").unwrap().as_str(), "皖A12345");
}

#[test]
fn normalize_preserves_character_order() {
    assert_eq!(normalize_plate("a-B2皖").unwrap().as_str(), "AB2皖");
}

#[test]
fn normalize_rejects_empty_result() {
    assert!(matches!(
        normalize_plate("- _ ·"),
        Err(ModelError::EmptyPlate { .. })
    ));
    assert!(matches!(
        normalize_plate(""),
        Err(ModelError::EmptyPlate { .. })
    ));
}

#[test]
fn normalize_rejects_unsupported_characters() {
    match normalize_plate("AB*12") {
        Err(ModelError::UnsupportedChar { ch, .. }) => assert_eq!(ch, '*'),
        other => panic!("expected UnsupportedChar, got {other:?}"),
    }
}

proptest! {
    #[test]
    fn normalize_is_idempotent(raw in "[A-Za-z0-9皖沪津 _·-]{1,12}") {
        if let Ok(key) = normalize_plate(&raw) {
            let again = normalize_plate(key.as_str()).unwrap();
            prop_assert_eq!(key.as_str(), again.as_str());
        }
    }

    #[test]
    fn normalize_is_identity_on_canonical_strings(raw in "[A-Z0-9]{1,12}") {
        let key = normalize_plate(&raw).unwrap();
        prop_assert_eq!(key.as_str(), raw);
    }
}

#[test]
fn parse_empty_stream_yields_empty_manifest() {
    let m = parse_manifest("").unwrap();
    assert!(m.is_empty());
    assert_eq!(m.dataset_id, EMPTY_DATASET_ID);
    assert!(!m.dataset_id.is_empty());
}

#[test]
fn manifest_round_trips_single_record() {
    let mut e = entry("img/001.png", "aolp", "AC", "AB1234");
    e.corners = Some(rect_quad(10.0, 20.0, 90.0, 60.0));
    e.bbox = Some([10.0, 20.0, 90.0, 60.0]);
    let m = manifest("aolp", vec![e]);
    let text = m.to_jsonl();
    let parsed = parse_manifest(&text).unwrap();
    assert_eq!(parsed.dataset_id, "aolp");
    assert_eq!(parsed.entries, m.entries);
    // Reserializing our own output is byte identical.
    assert_eq!(parsed.to_jsonl(), text);
}

#[test]
fn duplicate_id_is_rejected_and_named() {
    let m = manifest(
        "ds",
        vec![entry("a", "ds", "AC", "AB1"), entry("b", "ds", "AC", "AB2")],
    );
    let mut text = m.to_jsonl();
    text.push_str(text.clone().lines().next().unwrap());
    text.push('\n');
    match parse_manifest(&text) {
        Err(ModelError::DuplicateId { id }) => assert_eq!(id, "a"),
        other => panic!("expected DuplicateId, got {other:?}"),
    }
}

#[test]
fn malformed_line_reports_its_number() {
    let good = manifest("ds", vec![entry("a", "ds", "AC", "AB1")]).to_jsonl();
    let text = format!("{good}{{not json\n");
    match parse_manifest(&text) {
        Err(ModelError::Line { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected Line error, got {other:?}"),
    }
}

#[test]
fn blank_lines_are_ignored_and_do_not_shift_numbering() {
    let good = manifest("ds", vec![entry("a", "ds", "AC", "AB1")]).to_jsonl();
    let text = format!("\n\n{good}\nbroken\n");
    match parse_manifest(&text) {
        Err(ModelError::Line { line, .. }) => assert_eq!(line, 5),
        other => panic!("expected Line error, got {other:?}"),
    }
}

#[test]
fn mixed_dataset_ids_are_rejected() {
    let a = manifest("one", vec![entry("a", "one", "AC", "AB1")]).to_jsonl();
    let b = manifest("two", vec![entry("b", "two", "AC", "AB2")]).to_jsonl();
    match parse_manifest(&format!("{a}{b}")) {
        Err(ModelError::MixedDatasetId { first, other }) => {
            assert_eq!(first, "one");
            assert_eq!(other, "two");
        }
        other => panic!("expected MixedDatasetId, got {other:?}"),
    }
}

#[test]
fn collinear_corner_quad_is_rejected() {
    let mut e = entry("a", "ds", "AC", "AB1");
    e.corners = Some([
        Point::new(0.0, 0.0),
        Point::new(10.0, 0.0),
        Point::new(20.0, 0.0),
        Point::new(0.0, 10.0),
    ]);
    let err = e.validate().unwrap_err();
    assert!(err.to_string().contains("collinear"), "{err}");
}

#[test]
fn self_intersecting_corner_quad_is_rejected() {
    let mut e = entry("a", "ds", "AC", "AB1");
    // Asymmetric bowtie: edges (10,0)-(0,10) and (12,9)-(0,0) cross.
    e.corners = Some([
        Point::new(0.0, 0.0),
        Point::new(10.0, 0.0),
        Point::new(0.0, 10.0),
        Point::new(12.0, 9.0),
    ]);
    let err = e.validate().unwrap_err();
    assert!(err.to_string().contains("cross"), "{err}");
}

#[test]
fn zero_area_corner_quad_is_rejected() {
    let mut e = entry("a", "ds", "AC", "AB1");
    // Symmetric bowtie: the two lobes cancel to zero enclosed area.
    e.corners = Some([
        Point::new(0.0, 0.0),
        Point::new(10.0, 0.0),
        Point::new(0.0, 10.0),
        Point::new(10.0, 10.0),
    ]);
    let err = e.validate().unwrap_err();
    assert!(err.to_string().contains("zero enclosed area"), "{err}");
}

#[test]
fn out_of_bounds_corner_is_rejected() {
    let mut e = entry("a", "ds", "AC", "AB1");
    e.corners = Some(rect_quad(10.0, 10.0, 500.0, 60.0));
    let err = e.validate().unwrap_err();
    assert!(err.to_string().contains("outside image bounds"), "{err}");
}

#[test]
fn inverted_bbox_is_rejected() {
    let mut e = entry("a", "ds", "AC", "AB1");
    e.bbox = Some([50.0, 10.0, 20.0, 60.0]);
    let err = e.validate().unwrap_err();
    assert!(err.to_string().contains("inverted"), "{err}");
}

#[test]
fn from_entries_enforces_unique_ids() {
    let err = Manifest::from_entries(
        "ds",
        vec![entry("a", "ds", "AC", "AB1"), entry("a", "ds", "AC", "AB2")],
    )
    .unwrap_err();
    assert!(matches!(err, ModelError::DuplicateId { id } if id == "a"));
}

proptest! {
    #[test]
    fn manifest_round_trips_random_entries(
        specs in prop::collection::vec(
            ("[A-Z]{2}[0-9]{3,4}", any::<bool>(), 1.0f64..150.0, 1.0f64..70.0),
            0..16,
        )
    ) {
        let mut entries = Vec::new();
        for (i, (plate, with_geometry, x, y)) in specs.iter().enumerate() {
            let mut e = entry(&format!("img/{i:03}.png"), "ds", "AC", plate);
            if *with_geometry {
                let (x1, y1) = (x + 10.0, y + 10.0);
                e.corners = Some(rect_quad(*x, *y, x1, y1));
                e.bbox = Some([*x, *y, x1, y1]);
            }
            entries.push(e);
        }
        let m = manifest("ds", entries);
        let parsed = parse_manifest(&m.to_jsonl()).unwrap();
        prop_assert_eq!(parsed.entries, m.entries);
    }
}

// CCPD-style filename with every field populated; the expected values below
// are read off the grammar by hand.
const CCPD_NAME: &str =
    "025-95_113-154&383_386&473-386&473_177&454_154&383_363&402-0_0_22_27_27_33_16-37-15.jpg";

#[test]
fn ccpd_reference_filename_decodes_field_by_field() {
    let rec = parse_ccpd_filename(CCPD_NAME, &charmaps()).unwrap();
    assert!((rec.area_ratio - 0.025).abs() < 1e-12);
    assert_eq!(rec.tilt, (95.0, 113.0));
    assert_eq!(rec.bbox, [Point::new(154.0, 383.0), Point::new(386.0, 473.0)]);
    assert_eq!(
        rec.vertices,
        [
            Point::new(386.0, 473.0),
            Point::new(177.0, 454.0),
            Point::new(154.0, 383.0),
            Point::new(363.0, 402.0),
        ]
    );
    assert_eq!(rec.char_indices, vec![0, 0, 22, 27, 27, 33, 16]);
    assert_eq!(rec.brightness, 37);
    assert_eq!(rec.blurriness, 15);
}

#[test]
fn ccpd_corners_reorder_to_tl_tr_br_bl() {
    let rec = parse_ccpd_filename(CCPD_NAME, &charmaps()).unwrap();
    let q = rec.corners();
    assert_eq!(q[0], Point::new(154.0, 383.0)); // TL
    assert_eq!(q[1], Point::new(363.0, 402.0)); // TR
    assert_eq!(q[2], Point::new(386.0, 473.0)); // BR
    assert_eq!(q[3], Point::new(177.0, 454.0)); // BL
}

#[test]
fn ccpd_plate_matches_independent_table_lookup() {
    let maps = charmaps();
    let rec = parse_ccpd_filename(CCPD_NAME, &maps).unwrap();
    // Independent lookup: index straight into the fixture tables.
    let mut expected = String::new();
    expected.push_str(&maps.province[rec.char_indices[0]]);
    expected.push_str(&maps.letters[rec.char_indices[1]]);
    for &i in &rec.char_indices[2..] {
        expected.push_str(&maps.alnum[i]);
    }
    let key = rec.plate_key(&maps, false).unwrap();
    assert_eq!(key.as_str(), expected);
    assert_eq!(key.as_str(), "皖AY339S");
}

#[test]
fn ccpd_filename_without_extension_parses() {
    let stem = CCPD_NAME.trim_end_matches(".jpg");
    assert_eq!(
        parse_ccpd_filename(stem, &charmaps()).unwrap(),
        parse_ccpd_filename(CCPD_NAME, &charmaps()).unwrap()
    );
}

#[test]
fn ccpd_wrong_field_count_is_rejected() {
    let six = "025-95_113-154&383_386&473-386&473_177&454_154&383_363&402-0_0_22_27_27_33_16-37";
    match parse_ccpd_filename(six, &charmaps()) {
        Err(ModelError::CcpdFieldCount { got, .. }) => assert_eq!(got, 6),
        other => panic!("expected CcpdFieldCount, got {other:?}"),
    }
}

#[test]
fn ccpd_index_out_of_range_names_position_and_table() {
    // Fixture alnum table has 34 entries, so index 34 at position 3 overflows.
    let name = "025-95_113-154&383_386&473-386&473_177&454_154&383_363&402-0_0_22_34_27_33_16-37-15.jpg";
    match parse_ccpd_filename(name, &charmaps()) {
        Err(ModelError::IndexOutOfRange {
            position,
            index,
            table,
            len,
        }) => {
            assert_eq!(position, 3);
            assert_eq!(index, 34);
            assert_eq!(table, "alnum");
            assert_eq!(len, 34);
        }
        other => panic!("expected IndexOutOfRange, got {other:?}"),
    }
}

#[test]
fn ccpd_malformed_point_is_rejected() {
    let name = "025-95_113-154&383&9_386&473-386&473_177&454_154&383_363&402-0_0_22_27_27_33_16-37-15.jpg";
    match parse_ccpd_filename(name, &charmaps()) {
        Err(ModelError::CcpdField { field, .. }) => assert_eq!(field, "bbox"),
        other => panic!("expected CcpdField, got {other:?}"),
    }
}

#[test]
fn decode_all_zero_indices_takes_first_symbols() {
    let maps = charmaps();
    let expected = format!("{}{}{}", maps.province[0], maps.letters[0], maps.alnum[0].repeat(5));
    let key = decode_plate_indices(&[0; 7], &maps, false).unwrap();
    assert_eq!(key.as_str(), expected);
}

#[test]
fn decode_rejects_bad_lengths() {
    let maps = charmaps();
    assert!(matches!(
        decode_plate_indices(&[0; 6], &maps, false),
        Err(ModelError::IndexCount { got: 6 })
    ));
    assert!(matches!(
        decode_plate_indices(&[], &maps, false),
        Err(ModelError::EmptyIndices)
    ));
}

#[test]
fn decode_accepts_eight_only_for_green_style() {
    let maps = charmaps();
    assert!(matches!(
        decode_plate_indices(&[0; 8], &maps, false),
        Err(ModelError::EightCharsNotGreen)
    ));
    let key = decode_plate_indices(&[0; 8], &maps, true).unwrap();
    assert_eq!(key.as_str().chars().count(), 8);
}

#[test]
fn decode_out_of_range_index_names_offender() {
    let maps = charmaps();
    let mut indices = vec![0usize; 7];
    indices[1] = maps.letters.len();
    match decode_plate_indices(&indices, &maps, false) {
        Err(ModelError::IndexOutOfRange { position, table, .. }) => {
            assert_eq!(position, 1);
            assert_eq!(table, "letters");
        }
        other => panic!("expected IndexOutOfRange, got {other:?}"),
    }
}

#[test]
fn ccpd_image_entry_builds_validated_entry() {
    let maps = charmaps();
    let e = leakaudit::model::ccpd_image_entry(
        &format!("Base/{CCPD_NAME}"),
        "ccpd",
        "Base",
        720,
        1160,
        &maps,
    )
    .unwrap();
    assert_eq!(e.id, format!("Base/{CCPD_NAME}"));
    assert_eq!(e.subset, "Base");
    assert_eq!(e.plate_text, "皖AY339S");
    assert_eq!(e.bbox, Some([154.0, 383.0, 386.0, 473.0]));
    e.validate().unwrap();
}

fn format_point(p: (u32, u32)) -> String {
    format!("{}&{}", p.0, p.1)
}

prop_compose! {
    /// A grammatically valid CCPD-style filename over the fixture tables.
    fn arb_ccpd_name()(
        area in "[0-9]{1,4}",
        tilt in (0u32..400, 0u32..400),
        bbox in prop::array::uniform4(0u32..1000),
        verts in prop::array::uniform8(0u32..1000),
        p in 0usize..4,
        l in 0usize..26,
        rest in prop::collection::vec(0usize..34, 5),
        bright in 0u32..256,
        blur in 0u32..256,
    ) -> String {
        let idx: Vec<String> = std::iter::once(p)
            .chain(std::iter::once(l))
            .chain(rest.iter().copied())
            .map(|v| v.to_string())
            .collect();
        format!(
            "{area}-{}_{}-{}_{}-{}_{}_{}_{}-{}-{bright}-{blur}.jpg",
            tilt.0,
            tilt.1,
            format_point((bbox[0], bbox[1])),
            format_point((bbox[2], bbox[3])),
            format_point((verts[0], verts[1])),
            format_point((verts[2], verts[3])),
            format_point((verts[4], verts[5])),
            format_point((verts[6], verts[7])),
            idx.join("_"),
        )
    }
}

proptest! {
    #[test]
    fn ccpd_parser_is_total_on_conformant_names(name in arb_ccpd_name()) {
        let rec = parse_ccpd_filename(&name, &charmaps()).unwrap();
        prop_assert_eq!(rec.char_indices.len(), 7);
        prop_assert!(rec.area_ratio >= 0.0 && rec.area_ratio < 1.0);
    }

    #[test]
    fn ccpd_parser_rejects_star_mutations(
        name in arb_ccpd_name(),
        pos in any::<prop::sample::Index>(),
    ) {
        // '*' is invalid in every token, so mutating any stem byte breaks
        // the grammar.
        let stem_len = name.len() - ".jpg".len();
        let i = pos.index(stem_len);
        let mut bytes = name.into_bytes();
        bytes[i] = b'*';
        let mutated = String::from_utf8(bytes).unwrap();
        prop_assert!(parse_ccpd_filename(&mutated, &charmaps()).is_err());
    }
}
