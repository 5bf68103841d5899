//! Fair-split construction: a generic group-atomic splitter plus the three
//! named protocols, with exact-cardinality repair and verification.
//!
//! Every randomized step first sorts its working set on a stable key and
//! only then consumes the seeded generator, so the id-to-role map depends on
//! the manifest contents and the seed, never on entry order. The generator
//! is ChaCha20 seeded from the 64-bit spec seed; within one invocation the
//! draw order is fixed (test partition shuffle first, then the validation
//! carve, then any protocol-specific fills).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{build_groups, AuditError, DuplicateGroup};
use crate::model::{normalize_plate, Manifest, PlateKey};

#[derive(Debug, Error)]
pub enum SplitError {
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("infeasible split: no group-atomic subset reaches {target} test images")]
    Infeasible { target: usize },
    #[error("group sizes sum to {got}, expected {expected}")]
    InconsistentTotal { expected: usize, got: usize },
    #[error("target test count {target} exceeds dataset size {total}")]
    TargetExceedsTotal { target: usize, total: usize },
    #[error("entry `{id}` has unsupported subset tag `{subset}` for this protocol")]
    UnknownSubset { id: String, subset: String },
    #[error("{forced} duplicate-forced images exceed the validation target {target}")]
    ForcedValOverflow { forced: usize, target: usize },
    #[error("generic protocol requires per-role targets")]
    MissingTargets,
    #[error("targets sum to {got}, dataset has {expected} images")]
    TargetSum { expected: usize, got: usize },
    #[error("val fraction {0} outside [0, 1]")]
    BadValFraction(f64),
    #[error("unknown protocol `{0}`")]
    UnknownProtocol(String),
    #[error("unknown role `{0}`")]
    UnknownRole(String),
}

/// Role of an image within a split.
#[derive(
    Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Val,
    Test,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Train, Role::Val, Role::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Val => "val",
            Role::Test => "test",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = SplitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Role::Train),
            "val" => Ok(Role::Val),
            "test" => Ok(Role::Test),
            other => Err(SplitError::UnknownRole(other.to_string())),
        }
    }
}

/// Split protocol selector.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    AolpFairA,
    AolpFairB,
    CcpdFair,
    Generic,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::AolpFairA => "aolp_fair_a",
            Protocol::AolpFairB => "aolp_fair_b",
            Protocol::CcpdFair => "ccpd_fair",
            Protocol::Generic => "generic",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = SplitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "aolp_fair_a" => Ok(Protocol::AolpFairA),
            "aolp_fair_b" => Ok(Protocol::AolpFairB),
            "ccpd_fair" => Ok(Protocol::CcpdFair),
            "generic" => Ok(Protocol::Generic),
            other => Err(SplitError::UnknownProtocol(other.to_string())),
        }
    }
}

/// Parameters for one split invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub protocol: Protocol,
    pub seed: u64,
    /// Exact per-role counts; consulted by the generic protocol only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<BTreeMap<Role, usize>>,
    /// Fraction of the non-test pool carved out for validation.
    pub val_fraction: f64,
    /// Validation size for the CCPD Base donor; defaults to half of Base,
    /// mirroring the original 50/50 Base split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ccpd_val_target: Option<usize>,
}

impl SplitSpec {
    pub fn new(protocol: Protocol, seed: u64) -> Self {
        SplitSpec {
            protocol,
            seed,
            targets: None,
            val_fraction: 0.2,
            ccpd_val_target: None,
        }
    }

    fn validate(&self) -> Result<(), SplitError> {
        if !(0.0..=1.0).contains(&self.val_fraction) {
            return Err(SplitError::BadValFraction(self.val_fraction));
        }
        Ok(())
    }
}

/// Total assignment of images to roles, plus provenance.
///
/// `excluded` lists ids the protocol removed from the dataset outright
/// (aolp_fair_b drops leaked test images); together with `roles` it covers
/// every manifest id exactly once.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub protocol: String,
    pub seed: u64,
    pub roles: BTreeMap<String, Role>,
    pub excluded: Vec<String>,
    pub counts: BTreeMap<Role, usize>,
    pub notes: Vec<String>,
}

impl SplitAssignment {
    pub fn new(
        protocol: &str,
        seed: u64,
        roles: BTreeMap<String, Role>,
        mut excluded: Vec<String>,
        notes: Vec<String>,
    ) -> Self {
        excluded.sort();
        let mut assignment = SplitAssignment {
            protocol: protocol.to_string(),
            seed,
            roles,
            excluded,
            counts: BTreeMap::new(),
            notes,
        };
        assignment.counts = assignment.recomputed_counts();
        assignment
    }

    pub fn role_of(&self, id: &str) -> Option<Role> {
        self.roles.get(id).copied()
    }

    pub fn is_excluded(&self, id: &str) -> bool {
        self.excluded.binary_search_by(|e| e.as_str().cmp(id)).is_ok()
    }

    /// Ids holding the given role, ascending.
    pub fn ids_with_role(&self, role: Role) -> Vec<&str> {
        self.roles
            .iter()
            .filter(|(_, r)| **r == role)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn recomputed_counts(&self) -> BTreeMap<Role, usize> {
        let mut counts: BTreeMap<Role, usize> = Role::ALL.iter().map(|r| (*r, 0)).collect();
        for role in self.roles.values() {
            *counts.get_mut(role).expect("all roles present") += 1;
        }
        counts
    }

    /// Canonical serialization; byte-identical for equal assignments because
    /// every container is ordered.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("assignment serializes")
    }
}

/// Round half away from zero, the convention behind every protocol target
/// (round(2049 / 3) = 683).
pub fn round_half_away(x: f64) -> usize {
    x.round() as usize
}

struct GroupView<'a> {
    group: &'a DuplicateGroup,
}

impl<'a> GroupView<'a> {
    fn len(&self) -> usize {
        self.group.members.len()
    }

    fn key(&self) -> &PlateKey {
        &self.group.key
    }
}

/// Partition whole groups so the test side holds exactly `target_test`
/// images.
///
/// Procedure: order groups by key, shuffle with the seeded generator,
/// greedily fill the test side, then repair by exchanging one test group for
/// one or two rest groups (scanned deterministically smallest-first). If no
/// bounded swap lands the exact count, an exact subset-sum pass over the
/// shuffled order settles feasibility: it either produces a selection or
/// proves none exists.
pub fn group_atomic_partition(
    groups: &[DuplicateGroup],
    n_total: usize,
    target_test: usize,
    seed: u64,
) -> Result<(BTreeSet<String>, BTreeSet<String>), SplitError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    partition_with_rng(groups, n_total, target_test, &mut rng)
}

const SWAP_ATTEMPT_BUDGET: usize = 10_000;

fn partition_with_rng(
    groups: &[DuplicateGroup],
    n_total: usize,
    target_test: usize,
    rng: &mut ChaCha20Rng,
) -> Result<(BTreeSet<String>, BTreeSet<String>), SplitError> {
    let total: usize = groups.iter().map(|g| g.members.len()).sum();
    if total != n_total {
        return Err(SplitError::InconsistentTotal {
            expected: n_total,
            got: total,
        });
    }
    if target_test > n_total {
        return Err(SplitError::TargetExceedsTotal {
            target: target_test,
            total: n_total,
        });
    }

    let mut order: Vec<GroupView> = groups.iter().map(|group| GroupView { group }).collect();
    order.sort_by(|a, b| a.key().cmp(b.key()));
    order.shuffle(rng);

    let mut in_test: Vec<bool> = vec![false; order.len()];
    let mut test_size = 0usize;
    for (i, view) in order.iter().enumerate() {
        if test_size + view.len() <= target_test {
            in_test[i] = true;
            test_size += view.len();
        }
    }

    if test_size != target_test
        && !swap_repair(&order, &mut in_test, &mut test_size, target_test)
    {
        match exact_selection(&order, target_test) {
            Some(selected) => {
                in_test = selected;
            }
            None => return Err(SplitError::Infeasible {
                target: target_test,
            }),
        }
    }

    let mut test_ids = BTreeSet::new();
    let mut rest_ids = BTreeSet::new();
    for (i, view) in order.iter().enumerate() {
        let side = if in_test[i] {
            &mut test_ids
        } else {
            &mut rest_ids
        };
        for id in &view.group.members {
            side.insert(id.clone());
        }
    }
    Ok((test_ids, rest_ids))
}

/// Try to fix the greedy deficit by one exchange: a test group out, one or
/// two rest groups in. Candidates are scanned smallest-first with key order
/// as the tiebreak, so the repair is deterministic. Returns true when the
/// exact count was reached within the attempt budget.
fn swap_repair(
    order: &[GroupView],
    in_test: &mut [bool],
    test_size: &mut usize,
    target_test: usize,
) -> bool {
    // Greedy never overshoots, so the deficit is how many images the test
    // side still lacks.
    let deficit = target_test - *test_size;
    if deficit == 0 {
        return true;
    }
    let by_size = |side: bool| -> Vec<usize> {
        let mut v: Vec<usize> = (0..order.len()).filter(|&i| in_test[i] == side).collect();
        v.sort_by(|&a, &b| {
            (order[a].len(), order[a].key()).cmp(&(order[b].len(), order[b].key()))
        });
        v
    };
    let tests = by_size(true);
    let rests = by_size(false);
    let mut attempts = 0usize;

    for &t in &tests {
        for &r in &rests {
            attempts += 1;
            if attempts > SWAP_ATTEMPT_BUDGET {
                return false;
            }
            if order[r].len() == order[t].len() + deficit {
                in_test[t] = false;
                in_test[r] = true;
                *test_size = target_test;
                return true;
            }
        }
    }
    for &t in &tests {
        for (i, &r1) in rests.iter().enumerate() {
            for &r2 in rests.iter().skip(i + 1) {
                attempts += 1;
                if attempts > SWAP_ATTEMPT_BUDGET {
                    return false;
                }
                if order[r1].len() + order[r2].len() == order[t].len() + deficit {
                    in_test[t] = false;
                    in_test[r1] = true;
                    in_test[r2] = true;
                    *test_size = target_test;
                    return true;
                }
            }
        }
    }
    false
}

/// 0/1 subset-sum over group sizes with reconstruction. Walks the shuffled
/// order so the recovered selection still depends on the seed. Returns the
/// membership mask reaching the target exactly, or None when the target is
/// unreachable, which proves infeasibility.
fn exact_selection(order: &[GroupView], target: usize) -> Option<Vec<bool>> {
    const UNREACHED: isize = -2;
    const BASE: isize = -1;
    let mut via: Vec<isize> = vec![UNREACHED; target + 1];
    via[0] = BASE;
    for (i, view) in order.iter().enumerate() {
        let size = view.len();
        if size > target {
            continue;
        }
        // Descending sums: each group enters a sum at most once, and the
        // predecessor sum was reached before this group was considered.
        for s in (size..=target).rev() {
            if via[s] == UNREACHED && via[s - size] != UNREACHED {
                via[s] = i as isize;
            }
        }
    }
    if via[target] == UNREACHED {
        return None;
    }
    let mut selected = vec![false; order.len()];
    let mut s = target;
    while s > 0 {
        let i = via[s];
        debug_assert!(i >= 0, "reachable sums have a predecessor chain");
        selected[i as usize] = true;
        s -= order[i as usize].len();
    }
    Some(selected)
}

fn note(notes: &mut Vec<String>, text: impl Into<String>) {
    notes.push(text.into());
}

/// Random 2:1 train/test split that keeps duplicate groups intact, then a
/// validation carve of `val_fraction` from the non-test pool.
///
/// The carve prefers whole groups and falls back to individual images only
/// for the final shortfall; the taken path lands in the assignment notes.
/// Validation may share plates with train; only train/test disjointness is
/// a protocol guarantee.
pub fn split_aolp_fair_a(
    manifest: &Manifest,
    spec: &SplitSpec,
) -> Result<SplitAssignment, SplitError> {
    spec.validate()?;
    let groups = build_groups(&[manifest])?;
    let n = manifest.len();
    let target_test = round_half_away(n as f64 / 3.0);
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let (test_ids, rest_ids) = partition_with_rng(&groups, n, target_test, &mut rng)?;

    // Groups are atomic across the partition, so membership of the first id
    // decides the whole group's side.
    let mut rest_groups: Vec<&DuplicateGroup> = groups
        .iter()
        .filter(|g| rest_ids.contains(&g.members[0]))
        .collect();
    rest_groups.sort_by(|a, b| a.key.cmp(&b.key));
    rest_groups.shuffle(&mut rng);

    let val_target = round_half_away(spec.val_fraction * rest_ids.len() as f64);
    let mut val_ids: BTreeSet<String> = BTreeSet::new();
    let mut whole = vec![false; rest_groups.len()];
    for (i, g) in rest_groups.iter().enumerate() {
        if val_ids.len() + g.members.len() <= val_target {
            whole[i] = true;
            val_ids.extend(g.members.iter().cloned());
        }
    }
    let mut mixed = false;
    if val_ids.len() < val_target {
        // Shortfall: split the next shuffled groups, taking members in a
        // seeded order.
        mixed = true;
        for (i, g) in rest_groups.iter().enumerate() {
            if whole[i] {
                continue;
            }
            let mut members: Vec<&String> = g.members.iter().collect();
            members.shuffle(&mut rng);
            for id in members {
                if val_ids.len() == val_target {
                    break;
                }
                val_ids.insert(id.clone());
            }
            if val_ids.len() == val_target {
                break;
            }
        }
    }

    let mut roles = BTreeMap::new();
    for id in &test_ids {
        roles.insert(id.clone(), Role::Test);
    }
    for id in &rest_ids {
        let role = if val_ids.contains(id) {
            Role::Val
        } else {
            Role::Train
        };
        roles.insert(id.clone(), role);
    }
    let mut notes = Vec::new();
    note(
        &mut notes,
        format!(
            "val-carve={}",
            if mixed { "mixed" } else { "whole-groups" }
        ),
    );
    Ok(SplitAssignment::new(
        Protocol::AolpFairA.as_str(),
        spec.seed,
        roles,
        Vec::new(),
        notes,
    ))
}

/// Keep the original AC and LE training pool (with a seeded validation
/// carve) and drop every RP test image whose plate occurs in that pool.
/// Dropped ids are listed in `excluded`, shrinking the test set instead of
/// reshuffling it.
pub fn split_aolp_fair_b(
    manifest: &Manifest,
    spec: &SplitSpec,
) -> Result<SplitAssignment, SplitError> {
    spec.validate()?;
    let mut pool_ids: Vec<&str> = Vec::new();
    let mut pool_keys: BTreeSet<PlateKey> = BTreeSet::new();
    let mut rp: Vec<(&str, PlateKey)> = Vec::new();
    for entry in &manifest.entries {
        let key = normalize_plate(&entry.plate_text).map_err(AuditError::from)?;
        match entry.subset.as_str() {
            "AC" | "LE" => {
                pool_ids.push(&entry.id);
                pool_keys.insert(key);
            }
            "RP" => rp.push((&entry.id, key)),
            other => {
                return Err(SplitError::UnknownSubset {
                    id: entry.id.clone(),
                    subset: other.to_string(),
                })
            }
        }
    }

    let mut test_ids: Vec<&str> = Vec::new();
    let mut excluded: Vec<String> = Vec::new();
    for (id, key) in &rp {
        if pool_keys.contains(key) {
            excluded.push((*id).to_string());
        } else {
            test_ids.push(id);
        }
    }

    pool_ids.sort_unstable();
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    pool_ids.shuffle(&mut rng);
    let val_target = round_half_away(spec.val_fraction * pool_ids.len() as f64);
    let val_ids: BTreeSet<&str> = pool_ids.iter().take(val_target).copied().collect();

    let mut roles = BTreeMap::new();
    for id in &pool_ids {
        let role = if val_ids.contains(id) {
            Role::Val
        } else {
            Role::Train
        };
        roles.insert((*id).to_string(), role);
    }
    for id in &test_ids {
        roles.insert((*id).to_string(), Role::Test);
    }

    let mut notes = Vec::new();
    note(
        &mut notes,
        format!("removed {} leaked test images", excluded.len()),
    );
    if test_ids.is_empty() {
        note(
            &mut notes,
            "warning: empty test set (every RP plate occurs in AC or LE)",
        );
    }
    Ok(SplitAssignment::new(
        Protocol::AolpFairB.as_str(),
        spec.seed,
        roles,
        excluded,
        notes,
    ))
}

/// Subset tags recognized by `split_ccpd_fair` as split donors. Everything
/// else is test and is left exactly where it was.
const CCPD_BASE: &str = "Base";
const CCPD_GREEN_TRAIN: &str = "Green-train";
const CCPD_GREEN_VAL: &str = "Green-val";

/// Re-split the CCPD donors so train is duplicate-free against test.
///
/// Base images whose plate occurs in any test image are forced into
/// validation; seeded picks from the rest fill validation to its original
/// size (half of Base unless overridden) and the remainder trains. The
/// Green donors keep their original train/val sizes by swapping
/// non-conflicting validation images into train; when conflicts exceed the
/// swap capacity the residual delta is noted rather than repaired. Test is
/// never touched.
pub fn split_ccpd_fair(
    manifest: &Manifest,
    spec: &SplitSpec,
) -> Result<SplitAssignment, SplitError> {
    spec.validate()?;
    let mut base: Vec<(&str, PlateKey)> = Vec::new();
    let mut green_train: Vec<(&str, PlateKey)> = Vec::new();
    let mut green_val: Vec<(&str, PlateKey)> = Vec::new();
    let mut test: Vec<(&str, PlateKey)> = Vec::new();
    for entry in &manifest.entries {
        let key = normalize_plate(&entry.plate_text).map_err(AuditError::from)?;
        match entry.subset.as_str() {
            CCPD_BASE => base.push((&entry.id, key)),
            CCPD_GREEN_TRAIN => green_train.push((&entry.id, key)),
            CCPD_GREEN_VAL => green_val.push((&entry.id, key)),
            _ => test.push((&entry.id, key)),
        }
    }
    let test_keys: BTreeSet<&PlateKey> = test.iter().map(|(_, k)| k).collect();

    let mut roles: BTreeMap<String, Role> = BTreeMap::new();
    let mut notes = Vec::new();
    for (id, _) in &test {
        roles.insert((*id).to_string(), Role::Test);
    }

    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);

    // Base donor: forced conflicts to val, seeded fill to the target, rest
    // to train.
    let base_val_target = spec
        .ccpd_val_target
        .unwrap_or_else(|| round_half_away(base.len() as f64 / 2.0));
    let mut forced: Vec<&str> = Vec::new();
    let mut free: Vec<&str> = Vec::new();
    for (id, key) in &base {
        if test_keys.contains(key) {
            forced.push(id);
        } else {
            free.push(id);
        }
    }
    if forced.len() > base_val_target {
        return Err(SplitError::ForcedValOverflow {
            forced: forced.len(),
            target: base_val_target,
        });
    }
    free.sort_unstable();
    free.shuffle(&mut rng);
    let fill = base_val_target - forced.len();
    for id in &forced {
        roles.insert((*id).to_string(), Role::Val);
    }
    for (i, id) in free.iter().enumerate() {
        let role = if i < fill { Role::Val } else { Role::Train };
        roles.insert((*id).to_string(), role);
    }
    note(
        &mut notes,
        format!(
            "base: {} duplicate-forced val images, target {}",
            forced.len(),
            base_val_target
        ),
    );

    // Green donors: conflicted train images move to val; the same number of
    // non-conflicting val images move to train when available.
    if !green_train.is_empty() || !green_val.is_empty() {
        let mut g_forced: Vec<&str> = Vec::new();
        for (id, key) in &green_train {
            if test_keys.contains(key) {
                g_forced.push(id);
                roles.insert((*id).to_string(), Role::Val);
            } else {
                roles.insert((*id).to_string(), Role::Train);
            }
        }
        let mut swappable: Vec<&str> = Vec::new();
        for (id, key) in &green_val {
            if test_keys.contains(key) {
                roles.insert((*id).to_string(), Role::Val);
            } else {
                swappable.push(id);
            }
        }
        swappable.sort_unstable();
        swappable.shuffle(&mut rng);
        let moved = g_forced.len().min(swappable.len());
        for (i, id) in swappable.iter().enumerate() {
            let role = if i < moved { Role::Train } else { Role::Val };
            roles.insert((*id).to_string(), role);
        }
        let delta = g_forced.len() - moved;
        note(
            &mut notes,
            format!(
                "green: {} forced out of train, {} swapped back, residual delta {}",
                g_forced.len(),
                moved,
                delta
            ),
        );
    }

    Ok(SplitAssignment::new(
        Protocol::CcpdFair.as_str(),
        spec.seed,
        roles,
        Vec::new(),
        notes,
    ))
}

/// Fully group-atomic three-way split hitting the given per-role counts
/// exactly.
pub fn split_generic(
    manifest: &Manifest,
    spec: &SplitSpec,
) -> Result<SplitAssignment, SplitError> {
    spec.validate()?;
    let targets = spec.targets.as_ref().ok_or(SplitError::MissingTargets)?;
    let n = manifest.len();
    let want = |r: Role| targets.get(&r).copied().unwrap_or(0);
    let sum = want(Role::Train) + want(Role::Val) + want(Role::Test);
    if sum != n {
        return Err(SplitError::TargetSum {
            expected: n,
            got: sum,
        });
    }
    let groups = build_groups(&[manifest])?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let (test_ids, rest_ids) = partition_with_rng(&groups, n, want(Role::Test), &mut rng)?;
    let rest_groups: Vec<DuplicateGroup> = groups
        .iter()
        .filter(|g| rest_ids.contains(&g.members[0]))
        .cloned()
        .collect();
    let (val_ids, train_ids) =
        partition_with_rng(&rest_groups, rest_ids.len(), want(Role::Val), &mut rng)?;

    let mut roles = BTreeMap::new();
    for id in test_ids {
        roles.insert(id, Role::Test);
    }
    for id in val_ids {
        roles.insert(id, Role::Val);
    }
    for id in train_ids {
        roles.insert(id, Role::Train);
    }
    Ok(SplitAssignment::new(
        Protocol::Generic.as_str(),
        spec.seed,
        roles,
        Vec::new(),
        Vec::new(),
    ))
}

/// Dispatch to the protocol named in `spec`.
pub fn generate_split(
    manifest: &Manifest,
    spec: &SplitSpec,
) -> Result<SplitAssignment, SplitError> {
    match spec.protocol {
        Protocol::AolpFairA => split_aolp_fair_a(manifest, spec),
        Protocol::AolpFairB => split_aolp_fair_b(manifest, spec),
        Protocol::CcpdFair => split_ccpd_fair(manifest, spec),
        Protocol::Generic => split_generic(manifest, spec),
    }
}

/// One verification check: named, pass/fail, with the offending ids or
/// plates (capped) and a human-readable detail line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub offenders: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub protocol: String,
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

const OFFENDER_CAP: usize = 20;

fn check(name: &str, passed: bool, detail: String, mut offenders: Vec<String>) -> CheckResult {
    offenders.sort();
    offenders.dedup();
    let total = offenders.len();
    offenders.truncate(OFFENDER_CAP);
    let detail = if total > OFFENDER_CAP {
        format!("{detail} ({total} offenders, first {OFFENDER_CAP} listed)")
    } else {
        detail
    };
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
        offenders,
    }
}

/// Check a split assignment against the manifest, its duplicate groups, and
/// the protocol expectations: coverage, recorded counts, protocol targets,
/// train/test plate disjointness, and protocol-specific constraints.
/// Failures are report content, never errors.
pub fn verify_split(
    manifest: &Manifest,
    groups: &[DuplicateGroup],
    assignment: &SplitAssignment,
    spec: &SplitSpec,
) -> VerificationReport {
    let mut checks = Vec::new();

    // Coverage: roles plus exclusions account for every manifest id once.
    {
        let manifest_ids: BTreeSet<&str> = manifest.ids().collect();
        let mut offenders = Vec::new();
        let mut missing = 0usize;
        let mut extra = 0usize;
        let mut doubled = 0usize;
        for id in &manifest_ids {
            let has_role = assignment.roles.contains_key(*id);
            let is_excluded = assignment.is_excluded(id);
            if has_role && is_excluded {
                doubled += 1;
                offenders.push((*id).to_string());
            } else if !has_role && !is_excluded {
                missing += 1;
                offenders.push((*id).to_string());
            }
        }
        for id in assignment.roles.keys() {
            if !manifest_ids.contains(id.as_str()) {
                extra += 1;
                offenders.push(id.clone());
            }
        }
        for id in &assignment.excluded {
            if !manifest_ids.contains(id.as_str()) {
                extra += 1;
                offenders.push(id.clone());
            }
        }
        let passed = missing == 0 && extra == 0 && doubled == 0;
        checks.push(check(
            "coverage",
            passed,
            format!("{missing} unassigned, {extra} unknown, {doubled} double-assigned ids"),
            offenders,
        ));
    }

    // Recorded counts match the role map.
    {
        let recomputed = assignment.recomputed_counts();
        let passed = recomputed == assignment.counts;
        checks.push(check(
            "counts-recorded",
            passed,
            format!(
                "recorded {:?}, recomputed {:?}",
                assignment.counts, recomputed
            ),
            Vec::new(),
        ));
    }

    // Per-role counts match the protocol targets.
    {
        let (expected, detail): (Option<BTreeMap<Role, usize>>, String) =
            expected_counts(manifest, spec);
        match expected {
            Some(expected) => {
                let passed = expected
                    .iter()
                    .all(|(r, n)| assignment.counts.get(r) == Some(n));
                checks.push(check(
                    "counts-protocol",
                    passed,
                    format!("expected {expected:?}, actual {:?} ({detail})", assignment.counts),
                    Vec::new(),
                ));
            }
            None => {
                checks.push(check(
                    "counts-protocol",
                    false,
                    detail,
                    Vec::new(),
                ));
            }
        }
    }

    // Train/test plate disjointness, which is also group atomicity across
    // the train/test boundary.
    {
        let mut offenders = Vec::new();
        for group in groups {
            let mut in_train = false;
            let mut in_test = false;
            for id in &group.members {
                match assignment.role_of(id) {
                    Some(Role::Train) => in_train = true,
                    Some(Role::Test) => in_test = true,
                    _ => {}
                }
            }
            if in_train && in_test {
                offenders.push(group.key.as_str().to_string());
            }
        }
        let passed = offenders.is_empty();
        checks.push(check(
            "train-test-disjoint",
            passed,
            format!("{} plates span train and test", offenders.len()),
            offenders,
        ));
    }

    // Protocol-specific constraints.
    match spec.protocol {
        Protocol::CcpdFair => {
            let expected_test: BTreeSet<&str> = manifest
                .entries
                .iter()
                .filter(|e| {
                    !matches!(
                        e.subset.as_str(),
                        CCPD_BASE | CCPD_GREEN_TRAIN | CCPD_GREEN_VAL
                    )
                })
                .map(|e| e.id.as_str())
                .collect();
            let actual_test: BTreeSet<&str> = assignment
                .roles
                .iter()
                .filter(|(_, r)| **r == Role::Test)
                .map(|(id, _)| id.as_str())
                .collect();
            let offenders: Vec<String> = expected_test
                .symmetric_difference(&actual_test)
                .map(|s| s.to_string())
                .collect();
            let passed = offenders.is_empty();
            checks.push(check(
                "ccpd-test-identity",
                passed,
                format!(
                    "test set must equal the {} non-donor images",
                    expected_test.len()
                ),
                offenders,
            ));
        }
        Protocol::AolpFairB => {
            let rp_ids: BTreeSet<&str> = manifest
                .entries
                .iter()
                .filter(|e| e.subset == "RP")
                .map(|e| e.id.as_str())
                .collect();
            let mut offenders: Vec<String> = assignment
                .roles
                .iter()
                .filter(|(id, r)| **r == Role::Test && !rp_ids.contains(id.as_str()))
                .map(|(id, _)| id.clone())
                .collect();
            offenders.extend(
                assignment
                    .excluded
                    .iter()
                    .filter(|id| !rp_ids.contains(id.as_str()))
                    .cloned(),
            );
            let passed = offenders.is_empty();
            checks.push(check(
                "test-subset-of-original",
                passed,
                "fair test and excluded ids must come from RP".to_string(),
                offenders,
            ));
        }
        Protocol::AolpFairA | Protocol::Generic => {
            let passed = assignment.excluded.is_empty();
            checks.push(check(
                "no-exclusions",
                passed,
                format!("{} ids excluded", assignment.excluded.len()),
                assignment.excluded.clone(),
            ));
        }
    }

    VerificationReport {
        protocol: assignment.protocol.clone(),
        checks,
    }
}

/// Expected per-role counts for a protocol on this manifest, when they are
/// derivable. The detail string explains the derivation or the blocker.
fn expected_counts(
    manifest: &Manifest,
    spec: &SplitSpec,
) -> (Option<BTreeMap<Role, usize>>, String) {
    let n = manifest.len();
    match spec.protocol {
        Protocol::AolpFairA => {
            let test = round_half_away(n as f64 / 3.0);
            let rest = n - test;
            let val = round_half_away(spec.val_fraction * rest as f64);
            let counts = BTreeMap::from([
                (Role::Train, rest - val),
                (Role::Val, val),
                (Role::Test, test),
            ]);
            (
                Some(counts),
                format!("round({n}/3) test, round({} x rest) val", spec.val_fraction),
            )
        }
        Protocol::Generic => match &spec.targets {
            Some(t) => (Some(t.clone()), "explicit targets".to_string()),
            None => (None, "generic protocol without targets".to_string()),
        },
        Protocol::AolpFairB => {
            let mut pool = 0usize;
            let mut pool_keys: BTreeSet<PlateKey> = BTreeSet::new();
            let mut rp: Vec<PlateKey> = Vec::new();
            for e in &manifest.entries {
                let Ok(key) = normalize_plate(&e.plate_text) else {
                    return (None, format!("unparseable plate on `{}`", e.id));
                };
                match e.subset.as_str() {
                    "AC" | "LE" => {
                        pool += 1;
                        pool_keys.insert(key);
                    }
                    "RP" => rp.push(key),
                    _ => {}
                }
            }
            let leaked = rp.iter().filter(|k| pool_keys.contains(*k)).count();
            let test = rp.len() - leaked;
            let val = round_half_away(spec.val_fraction * pool as f64);
            let counts = BTreeMap::from([
                (Role::Train, pool - val),
                (Role::Val, val),
                (Role::Test, test),
            ]);
            (
                Some(counts),
                format!("{} RP images minus {leaked} leaked", rp.len()),
            )
        }
        Protocol::CcpdFair => {
            let mut n_base = 0usize;
            let mut g_train: Vec<PlateKey> = Vec::new();
            let mut g_val: Vec<PlateKey> = Vec::new();
            let mut test_keys: BTreeSet<PlateKey> = BTreeSet::new();
            let mut n_test = 0usize;
            for e in &manifest.entries {
                let Ok(key) = normalize_plate(&e.plate_text) else {
                    return (None, format!("unparseable plate on `{}`", e.id));
                };
                match e.subset.as_str() {
                    CCPD_BASE => n_base += 1,
                    CCPD_GREEN_TRAIN => g_train.push(key),
                    CCPD_GREEN_VAL => g_val.push(key),
                    _ => {
                        n_test += 1;
                        test_keys.insert(key);
                    }
                }
            }
            let base_val = spec
                .ccpd_val_target
                .unwrap_or_else(|| round_half_away(n_base as f64 / 2.0));
            let forced = g_train.iter().filter(|k| test_keys.contains(*k)).count();
            let swappable = g_val.iter().filter(|k| !test_keys.contains(*k)).count();
            let moved = forced.min(swappable);
            let delta = forced - moved;
            let val = base_val + g_val.len() + delta;
            let train = n_base - base_val + g_train.len() - forced + moved;
            let counts = BTreeMap::from([
                (Role::Train, train),
                (Role::Val, val),
                (Role::Test, n_test),
            ]);
            (
                Some(counts),
                format!("base val target {base_val}, green residual delta {delta}"),
            )
        }
    }
}
