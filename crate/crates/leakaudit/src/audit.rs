//! Near-duplicate grouping, split leakage audits, percentile pair
//! selection, cross-dataset overlap, and the evaluation metrics.
//!
//! Near-duplicate means identical normalized plate key. Pixel distance never
//! decides membership; it only ranks and tiers pairs for reporting.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    load_rgb, pixel_distance, rectify, CanonicalPlate, DEFAULT_CANONICAL_SIZE,
};
use crate::model::{normalize_plate, ImageEntry, Manifest, ModelError, PlateKey};
use crate::split::{Role, SplitAssignment};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("image id `{id}` has no role in the split assignment")]
    UnassignedId { id: String },
    #[error("split `{split}` has an empty test set; the leak fraction is undefined")]
    EmptyTestSplit { split: String },
    #[error("no distance pairs to rank")]
    EmptyPairs,
    #[error("percentile {value} outside [0, 100]")]
    BadPercentile { value: f64 },
    #[error("non-finite or negative distance {distance} for pair ({train_id}, {test_id})")]
    BadDistance {
        train_id: String,
        test_id: String,
        distance: f64,
    },
    #[error("empty truth set")]
    EmptyTruths,
    #[error("prediction id `{id}` is not in the truth set")]
    UnknownPredictionId { id: String },
    #[error("{name} must lie in [0, 100], got {value}")]
    AccuracyRange { name: &'static str, value: f64 },
    #[error("rel_gap is undefined when the original accuracy is 100%")]
    RelGapUndefined,
}

/// All images sharing one plate key, across one or more datasets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DuplicateGroup {
    pub key: PlateKey,
    /// Image ids, ascending and distinct.
    pub members: Vec<String>,
    pub dataset_ids: BTreeSet<String>,
}

impl DuplicateGroup {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Group every image by its normalized plate key. Exactly one group per
/// distinct key; every image lands in exactly one group; groups come back
/// sorted by key. Ids must be unique across all the manifests together.
pub fn build_groups(manifests: &[&Manifest]) -> Result<Vec<DuplicateGroup>, AuditError> {
    let mut by_key: BTreeMap<PlateKey, (BTreeSet<String>, BTreeSet<String>)> = BTreeMap::new();
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for manifest in manifests {
        for entry in &manifest.entries {
            if !seen.insert(&entry.id) {
                return Err(ModelError::DuplicateId {
                    id: entry.id.clone(),
                }
                .into());
            }
            let key = normalize_plate(&entry.plate_text)?;
            let slot = by_key.entry(key).or_default();
            slot.0.insert(entry.id.clone());
            slot.1.insert(entry.dataset_id.clone());
        }
    }
    Ok(by_key
        .into_iter()
        .map(|(key, (members, dataset_ids))| DuplicateGroup {
            key,
            members: members.into_iter().collect(),
            dataset_ids,
        })
        .collect())
}

/// A ranked same-plate pair across the train/test boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDistance {
    pub train_id: String,
    pub test_id: String,
    pub distance: f64,
}

/// A pair selected at a requested percentile of the distance ranking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PercentilePair {
    pub percentile: f64,
    pub train_id: String,
    pub test_id: String,
    pub distance: f64,
}

/// Report metadata: enough to reproduce the numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub canonical_size: (u32, u32),
    pub seed: Option<u64>,
    pub tool_version: String,
    /// Where pair distances come from. Distances are computed on rectified
    /// canonical plates, never raw crops; recorded here because figures
    /// elsewhere may differ.
    pub distance_source: String,
}

impl Default for ReportMeta {
    fn default() -> Self {
        ReportMeta {
            canonical_size: DEFAULT_CANONICAL_SIZE,
            seed: None,
            tool_version: crate::TOOL_VERSION.to_string(),
            distance_source: "rectified canonical plates".to_string(),
        }
    }
}

/// Leakage audit of one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub split_name: String,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Test images whose plate also occurs on at least one train image.
    pub n_test_leaked: usize,
    pub leak_fraction: f64,
    /// Validation images sharing a plate with train. Reported for context,
    /// never counted as leakage: the audit is train-versus-test.
    pub n_val_overlap: usize,
    /// histogram[size] = number of images living in groups of that size;
    /// values sum to the number of audited images.
    pub group_size_histogram: BTreeMap<usize, usize>,
    pub percentile_pairs: Vec<PercentilePair>,
    pub metadata: ReportMeta,
}

/// Audit a split for train/test leakage.
///
/// Ids listed as excluded by the assignment are outside the audited
/// universe and are skipped; any other unassigned group member is an error.
/// Requires a non-empty test side, otherwise the fraction is undefined.
pub fn audit_split(
    groups: &[DuplicateGroup],
    assignment: &SplitAssignment,
    split_name: &str,
) -> Result<LeakageReport, AuditError> {
    let mut n_train = 0usize;
    let mut n_val = 0usize;
    let mut n_test = 0usize;
    let mut n_test_leaked = 0usize;
    let mut n_val_overlap = 0usize;
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();

    for group in groups {
        let mut group_train = 0usize;
        let mut group_val = 0usize;
        let mut group_test = 0usize;
        let mut present = 0usize;
        for id in &group.members {
            match assignment.role_of(id) {
                Some(Role::Train) => group_train += 1,
                Some(Role::Val) => group_val += 1,
                Some(Role::Test) => group_test += 1,
                None => {
                    if assignment.is_excluded(id) {
                        continue;
                    }
                    return Err(AuditError::UnassignedId { id: id.clone() });
                }
            }
            present += 1;
        }
        if present == 0 {
            continue;
        }
        n_train += group_train;
        n_val += group_val;
        n_test += group_test;
        if group_train > 0 {
            n_test_leaked += group_test;
            n_val_overlap += group_val;
        }
        *histogram.entry(present).or_insert(0) += present;
    }

    if n_test == 0 {
        return Err(AuditError::EmptyTestSplit {
            split: split_name.to_string(),
        });
    }

    Ok(LeakageReport {
        split_name: split_name.to_string(),
        n_train,
        n_val,
        n_test,
        n_test_leaked,
        leak_fraction: n_test_leaked as f64 / n_test as f64,
        n_val_overlap,
        group_size_histogram: histogram,
        percentile_pairs: Vec::new(),
        metadata: ReportMeta {
            seed: Some(assignment.seed),
            ..ReportMeta::default()
        },
    })
}

/// Enumerate all same-plate (train, test) pairs of a split, the raw
/// material for percentile ranking.
pub fn leak_pairs(
    groups: &[DuplicateGroup],
    assignment: &SplitAssignment,
) -> Vec<(String, String)> {
    let mut pairs = Vec::new();
    for group in groups {
        let mut train: Vec<&String> = Vec::new();
        let mut test: Vec<&String> = Vec::new();
        for id in &group.members {
            match assignment.role_of(id) {
                Some(Role::Train) => train.push(id),
                Some(Role::Test) => test.push(id),
                _ => {}
            }
        }
        for tr in &train {
            for te in &test {
                pairs.push(((*tr).clone(), (*te).clone()));
            }
        }
    }
    pairs
}

/// Select the pair at each requested percentile of the ascending distance
/// ranking. Rank convention: zero-based floor(p/100 * (n - 1)); ties order
/// by (train_id, test_id).
pub fn percentile_pairs(
    pairs: &[PairDistance],
    percentiles: &[f64],
) -> Result<Vec<PercentilePair>, AuditError> {
    if pairs.is_empty() {
        return Err(AuditError::EmptyPairs);
    }
    for p in percentiles {
        if !p.is_finite() || *p < 0.0 || *p > 100.0 {
            return Err(AuditError::BadPercentile { value: *p });
        }
    }
    for pair in pairs {
        if !pair.distance.is_finite() || pair.distance < 0.0 {
            return Err(AuditError::BadDistance {
                train_id: pair.train_id.clone(),
                test_id: pair.test_id.clone(),
                distance: pair.distance,
            });
        }
    }
    let mut sorted: Vec<&PairDistance> = pairs.iter().collect();
    sorted.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then_with(|| a.train_id.cmp(&b.train_id))
            .then_with(|| a.test_id.cmp(&b.test_id))
    });
    let n = sorted.len();
    let mut out = Vec::with_capacity(percentiles.len());
    for &p in percentiles {
        let rank = ((p / 100.0) * ((n - 1) as f64)).floor() as usize;
        let rank = rank.min(n - 1);
        let chosen = sorted[rank];
        out.push(PercentilePair {
            percentile: p,
            train_id: chosen.train_id.clone(),
            test_id: chosen.test_id.clone(),
            distance: chosen.distance,
        });
    }
    Ok(out)
}

/// Supplies rectified canonical plates for distance computation. Return
/// None when pixels are unavailable (no corners, missing file, undecodable
/// image); callers degrade to distance-free reporting.
pub trait PlateSource {
    fn canonical_plate(&self, dataset_id: &str, entry: &ImageEntry) -> Option<CanonicalPlate>;
}

/// A source with no pixel access; every distance is reported absent.
pub struct NoPixels;

impl PlateSource for NoPixels {
    fn canonical_plate(&self, _dataset_id: &str, _entry: &ImageEntry) -> Option<CanonicalPlate> {
        None
    }
}

/// Loads images from per-dataset root directories, rectifies against the
/// entry corners, and caches the canonical plates. Single-threaded use.
pub struct DirPlateSource {
    roots: BTreeMap<String, PathBuf>,
    canonical_size: (u32, u32),
    cache: RefCell<BTreeMap<String, Option<CanonicalPlate>>>,
}

impl DirPlateSource {
    pub fn new(roots: BTreeMap<String, PathBuf>, canonical_size: (u32, u32)) -> Self {
        DirPlateSource {
            roots,
            canonical_size,
            cache: RefCell::new(BTreeMap::new()),
        }
    }
}

impl PlateSource for DirPlateSource {
    fn canonical_plate(&self, dataset_id: &str, entry: &ImageEntry) -> Option<CanonicalPlate> {
        let cache_key = format!("{dataset_id}\u{0}{}", entry.id);
        if let Some(hit) = self.cache.borrow().get(&cache_key) {
            return hit.clone();
        }
        let plate = (|| {
            let root = self.roots.get(dataset_id)?;
            let corners = entry.corners.as_ref()?;
            let img = load_rgb(&root.join(&entry.id)).ok()?;
            rectify(&img, corners, self.canonical_size).ok()
        })();
        self.cache
            .borrow_mut()
            .insert(cache_key, plate.clone());
        plate
    }
}

/// Overlap confidence tier. "Likely" means the pixel distance cleared the
/// caller's threshold; everything else stays a candidate.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Likely,
    Candidate,
}

/// One cross-dataset same-plate pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapPair {
    pub key: PlateKey,
    pub id_a: String,
    pub id_b: String,
    pub distance: Option<f64>,
    pub tier: Tier,
}

/// All cross-dataset pairs sharing a plate key, ordered by (key, id_a,
/// id_b). Distances are attached when the source can produce both plates;
/// the tier is "likely" only when a threshold is given and met.
pub fn cross_dataset_overlap(
    a: &Manifest,
    b: &Manifest,
    threshold: Option<f64>,
    plates: &dyn PlateSource,
) -> Result<Vec<OverlapPair>, AuditError> {
    let mut by_key_a: BTreeMap<PlateKey, Vec<&ImageEntry>> = BTreeMap::new();
    for entry in &a.entries {
        by_key_a
            .entry(normalize_plate(&entry.plate_text)?)
            .or_default()
            .push(entry);
    }
    let mut by_key_b: BTreeMap<PlateKey, Vec<&ImageEntry>> = BTreeMap::new();
    for entry in &b.entries {
        by_key_b
            .entry(normalize_plate(&entry.plate_text)?)
            .or_default()
            .push(entry);
    }

    let mut out = Vec::new();
    for (key, entries_a) in &by_key_a {
        let Some(entries_b) = by_key_b.get(key) else {
            continue;
        };
        for ea in entries_a {
            for eb in entries_b {
                let distance = match (
                    plates.canonical_plate(&a.dataset_id, ea),
                    plates.canonical_plate(&b.dataset_id, eb),
                ) {
                    (Some(pa), Some(pb)) => pixel_distance(&pa, &pb).ok(),
                    _ => None,
                };
                let tier = match (threshold, distance) {
                    (Some(t), Some(d)) if d <= t => Tier::Likely,
                    _ => Tier::Candidate,
                };
                out.push(OverlapPair {
                    key: key.clone(),
                    id_a: ea.id.clone(),
                    id_b: eb.id.clone(),
                    distance,
                    tier,
                });
            }
        }
    }
    out.sort_by(|x, y| {
        x.key
            .cmp(&y.key)
            .then_with(|| x.id_a.cmp(&y.id_a))
            .then_with(|| x.id_b.cmp(&y.id_b))
    });
    Ok(out)
}

/// Fraction of test plates whose full string is predicted correctly, as a
/// percentage. Comparison runs on normalized strings; a missing or
/// unparseable prediction counts as wrong.
pub fn recognition_rate(
    predictions: &BTreeMap<String, String>,
    truths: &BTreeMap<String, String>,
) -> Result<f64, AuditError> {
    if truths.is_empty() {
        return Err(AuditError::EmptyTruths);
    }
    for id in predictions.keys() {
        if !truths.contains_key(id) {
            return Err(AuditError::UnknownPredictionId { id: id.clone() });
        }
    }
    let mut correct = 0usize;
    for (id, truth) in truths {
        let truth_key = normalize_plate(truth)?;
        let matched = predictions
            .get(id)
            .and_then(|p| normalize_plate(p).ok())
            .is_some_and(|k| k == truth_key);
        if matched {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / truths.len() as f64)
}

/// Accuracy drop from the original to the fair protocol, absolute and
/// relative to the original error.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapMetrics {
    pub acc_orig: f64,
    pub acc_fair: f64,
    /// Percentage points: acc_orig - acc_fair.
    pub gap: f64,
    /// Percent of the original error: 100 * gap / (100 - acc_orig).
    pub rel_gap: f64,
}

pub fn gap_metrics(acc_orig: f64, acc_fair: f64) -> Result<GapMetrics, AuditError> {
    for (name, value) in [("acc_orig", acc_orig), ("acc_fair", acc_fair)] {
        if !value.is_finite() || !(0.0..=100.0).contains(&value) {
            return Err(AuditError::AccuracyRange { name, value });
        }
    }
    if acc_orig == 100.0 {
        return Err(AuditError::RelGapUndefined);
    }
    let gap = acc_orig - acc_fair;
    Ok(GapMetrics {
        acc_orig,
        acc_fair,
        gap,
        rel_gap: 100.0 * gap / (100.0 - acc_orig),
    })
}
