//! Command line front end. Exit codes: 0 success, 1 validation failure,
//! 2 usage error.
//!
//! Stdout carries reports; stderr carries diagnostics. The only side
//! effects are the declared output paths, each written atomically.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use leakaudit::audit::{
    audit_split, build_groups, cross_dataset_overlap, gap_metrics, leak_pairs,
    percentile_pairs, DirPlateSource, NoPixels, PairDistance, PlateSource,
};
use leakaudit::geometry::{
    parse_canonical_size, pixel_distance, CanonicalPlate, DEFAULT_CANONICAL_SIZE,
};
use leakaudit::model::{ccpd_image_entry, load_manifest, Charmaps, ImageEntry, Manifest};
use leakaudit::report::{
    emit_audit, emit_gallery, emit_split_files, format_verification, load_split_dir,
    write_atomic, AuditDocument, AuditFormat, GalleryPair, InputDigest, OverlapSection,
};
use leakaudit::split::{generate_split, verify_split, Protocol, Role, SplitSpec};
use leakaudit::synth::{generate_one, SynthConfigFile};
use serde::Deserialize;

/// Entry point shared by the binary and the tests.
pub fn cli_run<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            failure.code
        }
    }
}

#[derive(Parser)]
#[command(
    name = "leakaudit",
    version,
    about = "Audit labeled plate datasets for train/test leakage, generate fair splits, \
             and synthesize augmentation plates"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a manifest from a list of CCPD-style annotated filenames.
    Ingest(IngestArgs),
    /// Audit a split directory for train/test plate leakage.
    Audit(AuditArgs),
    /// Generate a duplicate-free split and write its file set.
    FairSplit(FairSplitArgs),
    /// Re-check an emitted split directory against its manifest.
    Verify(VerifyArgs),
    /// Report plates shared between two dataset manifests.
    Overlap(OverlapArgs),
    /// Render a deterministic synthetic plate corpus from a config file.
    Synth(SynthArgs),
    /// Compute Gap and Rel-Gap from original/fair accuracy pairs.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Text file with one CCPD-style image path per line.
    #[arg(long, value_name = "FILE")]
    ccpd_filenames: PathBuf,
    /// Dataset id recorded on every entry.
    #[arg(long, value_name = "ID")]
    dataset_id: String,
    /// Subset tag (tags starting with "Green" decode 8-character plates).
    #[arg(long, value_name = "NAME")]
    subset: String,
    /// Charmap TOML (province/letters/alnum tables). Falls back to the
    /// `charmaps` key of the LEAKAUDIT_CONFIG file.
    #[arg(long, value_name = "FILE")]
    charmaps: Option<PathBuf>,
    /// Source image dimensions as WxH.
    #[arg(long, value_name = "WxH", default_value = "720x1160")]
    image_size: String,
    /// Manifest output path (JSONL).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Append to an existing manifest instead of replacing it.
    #[arg(long)]
    append: bool,
}

#[derive(Args)]
struct AuditArgs {
    /// Manifest path; repeat to audit across several datasets.
    #[arg(long, value_name = "FILE", required = true)]
    manifest: Vec<PathBuf>,
    /// Split directory holding train.txt/val.txt/test.txt plus meta.json.
    #[arg(long, value_name = "DIR")]
    split_dir: PathBuf,
    /// Image root per dataset as DATASET=PATH; enables pixel distances.
    #[arg(long, value_name = "DATASET=PATH")]
    images_root: Vec<String>,
    /// Percentiles of the leaked-pair distance ranking to report.
    #[arg(long, value_name = "LIST")]
    percentiles: Option<String>,
    /// Rectified plate size as WxH.
    #[arg(long, value_name = "WxH")]
    canonical_size: Option<String>,
    /// Emit a static duplicate-pair gallery into this directory.
    #[arg(long, value_name = "DIR")]
    gallery: Option<PathBuf>,
    /// Output format: json or table.
    #[arg(long, value_name = "NAME")]
    format: Option<String>,
    /// Write the document here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FairSplitArgs {
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// aolp_fair_a, aolp_fair_b, ccpd_fair, or generic.
    #[arg(long, value_name = "NAME")]
    protocol: String,
    #[arg(long, value_name = "U64", default_value_t = 0)]
    seed: u64,
    /// Directory for train.txt/val.txt/test.txt plus meta.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Fraction of the non-test pool carved out for validation.
    #[arg(long, value_name = "REAL")]
    val_fraction: Option<f64>,
    /// Validation size for the CCPD Base donor (default: half of Base).
    #[arg(long, value_name = "N")]
    ccpd_val_target: Option<usize>,
    /// Exact role counts for the generic protocol (give all three).
    #[arg(long, value_name = "N")]
    target_train: Option<usize>,
    #[arg(long, value_name = "N")]
    target_val: Option<usize>,
    #[arg(long, value_name = "N")]
    target_test: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    #[arg(long, value_name = "DIR")]
    split_dir: PathBuf,
    /// Override the protocol recorded in the sidecar.
    #[arg(long, value_name = "NAME")]
    protocol: Option<String>,
    /// Must match the value used at generation time.
    #[arg(long, value_name = "REAL")]
    val_fraction: Option<f64>,
    /// Must match the value used at generation time.
    #[arg(long, value_name = "N")]
    ccpd_val_target: Option<usize>,
    #[arg(long, value_name = "N")]
    target_train: Option<usize>,
    #[arg(long, value_name = "N")]
    target_val: Option<usize>,
    #[arg(long, value_name = "N")]
    target_test: Option<usize>,
}

#[derive(Args)]
struct OverlapArgs {
    /// Exactly two manifests to compare.
    #[arg(long, value_name = "FILE", required = true)]
    manifest: Vec<PathBuf>,
    /// Distance at or under which a pair is tiered "likely".
    #[arg(long, value_name = "REAL")]
    threshold: Option<f64>,
    #[arg(long, value_name = "DATASET=PATH")]
    images_root: Vec<String>,
    #[arg(long, value_name = "WxH")]
    canonical_size: Option<String>,
    #[arg(long, value_name = "NAME")]
    format: Option<String>,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Synthesis config TOML; asset paths resolve relative to it.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Override the config's output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override the config's image count.
    #[arg(long, value_name = "N")]
    count: Option<u64>,
    /// Override the config's master seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Original-protocol accuracy in percent; repeatable, paired by order.
    #[arg(long, value_name = "REAL", required = true)]
    orig: Vec<f64>,
    /// Fair-protocol accuracy in percent; one per --orig.
    #[arg(long, value_name = "REAL", required = true)]
    fair: Vec<f64>,
}

struct Failure {
    code: u8,
    message: String,
}

fn invalid(message: impl std::fmt::Display) -> Failure {
    Failure {
        code: 1,
        message: message.to_string(),
    }
}

fn usage(message: impl std::fmt::Display) -> Failure {
    Failure {
        code: 2,
        message: message.to_string(),
    }
}

fn at_path(path: &Path, err: impl std::fmt::Display) -> Failure {
    invalid(format!("{}: {err}", path.display()))
}

/// Keys honored in the optional LEAKAUDIT_CONFIG TOML file. Flags override
/// these; these override built-in defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CliConfig {
    canonical_size: Option<String>,
    val_fraction: Option<f64>,
    format: Option<String>,
    threshold: Option<f64>,
    percentiles: Option<Vec<f64>>,
    charmaps: Option<PathBuf>,
}

const CONFIG_ENV: &str = "LEAKAUDIT_CONFIG";

fn load_config() -> Result<CliConfig, Failure> {
    match std::env::var_os(CONFIG_ENV) {
        None => Ok(CliConfig::default()),
        Some(path) => {
            let path = PathBuf::from(path);
            let text = std::fs::read_to_string(&path).map_err(|e| at_path(&path, e))?;
            toml::from_str(&text).map_err(|e| at_path(&path, e))
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let config = load_config()?;
    match cli.cmd {
        Cmd::Ingest(args) => run_ingest(args, &config),
        Cmd::Audit(args) => run_audit(args, &config),
        Cmd::FairSplit(args) => run_fair_split(args, &config),
        Cmd::Verify(args) => run_verify(args, &config),
        Cmd::Overlap(args) => run_overlap(args, &config),
        Cmd::Synth(args) => run_synth(args),
        Cmd::Metrics(args) => run_metrics(args),
    }
}

fn pick_canonical_size(
    flag: &Option<String>,
    config: &CliConfig,
) -> Result<(u32, u32), Failure> {
    let text = flag.as_ref().or(config.canonical_size.as_ref());
    match text {
        None => Ok(DEFAULT_CANONICAL_SIZE),
        Some(t) => parse_canonical_size(t)
            .ok_or_else(|| invalid(format!("bad canonical size `{t}` (expected WxH)"))),
    }
}

fn pick_format(flag: &Option<String>, config: &CliConfig) -> Result<AuditFormat, Failure> {
    let name = flag
        .as_deref()
        .or(config.format.as_deref())
        .unwrap_or("json");
    name.parse().map_err(invalid)
}

fn parse_percentiles(flag: &Option<String>, config: &CliConfig) -> Result<Vec<f64>, Failure> {
    if let Some(text) = flag {
        return text
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| usage(format!("--percentiles `{t}`: {e}")))
            })
            .collect();
    }
    Ok(config
        .percentiles
        .clone()
        .unwrap_or_else(|| vec![10.0, 50.0, 90.0]))
}

fn parse_roots(specs: &[String]) -> Result<BTreeMap<String, PathBuf>, Failure> {
    let mut roots = BTreeMap::new();
    for spec in specs {
        let (dataset, path) = spec
            .split_once('=')
            .ok_or_else(|| usage(format!("--images-root `{spec}`: expected DATASET=PATH")))?;
        roots.insert(dataset.to_string(), PathBuf::from(path));
    }
    Ok(roots)
}

fn load_manifests(paths: &[PathBuf]) -> Result<Vec<Manifest>, Failure> {
    paths
        .iter()
        .map(|p| load_manifest(p).map_err(|e| at_path(p, e)))
        .collect()
}

fn digests(paths: &[PathBuf]) -> Result<Vec<InputDigest>, Failure> {
    paths.iter().map(|p| InputDigest::of_file(p).map_err(invalid)).collect()
}

fn emit_document(
    doc: &AuditDocument,
    format: AuditFormat,
    out: &Option<PathBuf>,
) -> Result<(), Failure> {
    let bytes = emit_audit(doc, format).map_err(invalid)?;
    match out {
        Some(path) => write_atomic(path, &bytes).map_err(invalid),
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| invalid(format!("stdout: {e}"))),
    }
}

fn run_ingest(args: IngestArgs, config: &CliConfig) -> Result<(), Failure> {
    let charmap_path = args
        .charmaps
        .as_ref()
        .or(config.charmaps.as_ref())
        .ok_or_else(|| {
            usage("ingest needs --charmaps (or a `charmaps` key in the config file)")
        })?;
    let maps = Charmaps::load(charmap_path).map_err(|e| at_path(charmap_path, e))?;
    let (width, height) = parse_canonical_size(&args.image_size).ok_or_else(|| {
        usage(format!(
            "--image-size `{}`: expected WxH",
            args.image_size
        ))
    })?;
    let list = std::fs::read_to_string(&args.ccpd_filenames)
        .map_err(|e| at_path(&args.ccpd_filenames, e))?;

    let mut entries: Vec<ImageEntry> = Vec::new();
    if args.append && args.out.exists() {
        let existing = load_manifest(&args.out).map_err(|e| at_path(&args.out, e))?;
        if existing.dataset_id != args.dataset_id && !existing.is_empty() {
            return Err(invalid(format!(
                "{}: holds dataset `{}`, refusing to append `{}`",
                args.out.display(),
                existing.dataset_id,
                args.dataset_id
            )));
        }
        entries = existing.entries;
    }
    let mut added = 0usize;
    for (idx, line) in list.lines().enumerate() {
        let name = line.trim();
        if name.is_empty() {
            continue;
        }
        let entry = ccpd_image_entry(
            name,
            &args.dataset_id,
            &args.subset,
            width,
            height,
            &maps,
        )
        .map_err(|e| {
            invalid(format!(
                "{} line {}: {e}",
                args.ccpd_filenames.display(),
                idx + 1
            ))
        })?;
        entries.push(entry);
        added += 1;
    }
    let manifest =
        Manifest::from_entries(&args.dataset_id, entries).map_err(invalid)?;
    write_atomic(&args.out, manifest.to_jsonl().as_bytes()).map_err(invalid)?;
    println!(
        "wrote {} entries ({added} new) to {}",
        manifest.len(),
        args.out.display()
    );
    Ok(())
}

/// Look up plates for ranked pairs: id -> (dataset, entry) across all
/// loaded manifests.
fn entry_index(manifests: &[Manifest]) -> BTreeMap<&str, (&str, &ImageEntry)> {
    let mut index = BTreeMap::new();
    for m in manifests {
        for e in &m.entries {
            index.insert(e.id.as_str(), (m.dataset_id.as_str(), e));
        }
    }
    index
}

fn run_audit(args: AuditArgs, config: &CliConfig) -> Result<(), Failure> {
    let format = pick_format(&args.format, config)?;
    let canonical_size = pick_canonical_size(&args.canonical_size, config)?;
    let percentiles = parse_percentiles(&args.percentiles, config)?;
    let roots = parse_roots(&args.images_root)?;

    let manifests = load_manifests(&args.manifest)?;
    let refs: Vec<&Manifest> = manifests.iter().collect();
    let groups = build_groups(&refs).map_err(invalid)?;
    let assignment =
        load_split_dir(&args.split_dir).map_err(|e| at_path(&args.split_dir, e))?;
    let split_name = args
        .split_dir
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| "split".to_string());

    let mut report = audit_split(&groups, &assignment, &split_name).map_err(invalid)?;
    report.metadata.canonical_size = canonical_size;
    report.metadata.seed = Some(assignment.seed);

    let mut gallery_pairs: Vec<GalleryPair> = Vec::new();
    if !roots.is_empty() {
        let source = DirPlateSource::new(roots, canonical_size);
        let index = entry_index(&manifests);
        let mut distances: Vec<PairDistance> = Vec::new();
        let mut skipped = 0usize;
        let plate_of = |id: &str| -> Option<CanonicalPlate> {
            let (dataset, entry) = index.get(id)?;
            source.canonical_plate(dataset, entry)
        };
        for (train_id, test_id) in leak_pairs(&groups, &assignment) {
            match (plate_of(&train_id), plate_of(&test_id)) {
                (Some(a), Some(b)) => {
                    let distance = pixel_distance(&a, &b).map_err(invalid)?;
                    distances.push(PairDistance {
                        train_id,
                        test_id,
                        distance,
                    });
                }
                _ => skipped += 1,
            }
        }
        if skipped > 0 {
            eprintln!("note: {skipped} leaked pairs lacked readable images, not ranked");
        }
        if !distances.is_empty() {
            report.metadata.distance_source = "rectified plates under --images-root".to_string();
            report.percentile_pairs =
                percentile_pairs(&distances, &percentiles).map_err(invalid)?;
            for pair in &report.percentile_pairs {
                let (Some(train_plate), Some(test_plate)) =
                    (plate_of(&pair.train_id), plate_of(&pair.test_id))
                else {
                    continue;
                };
                gallery_pairs.push(GalleryPair {
                    label: format!("p{:.0}", pair.percentile),
                    percentile: pair.percentile,
                    train_id: pair.train_id.clone(),
                    test_id: pair.test_id.clone(),
                    distance: pair.distance,
                    train_plate,
                    test_plate,
                });
            }
        }
    }
    if let Some(dir) = &args.gallery {
        emit_gallery(&gallery_pairs, dir).map_err(invalid)?;
        eprintln!(
            "gallery: {} pairs under {}",
            gallery_pairs.len(),
            dir.display()
        );
    }

    let mut doc = AuditDocument::new();
    doc.inputs = digests(&args.manifest)?;
    doc.reports.push(report);
    emit_document(&doc, format, &args.out)
}

fn gather_targets(
    train: Option<usize>,
    val: Option<usize>,
    test: Option<usize>,
) -> Result<Option<BTreeMap<Role, usize>>, Failure> {
    match (train, val, test) {
        (None, None, None) => Ok(None),
        (Some(tr), Some(v), Some(te)) => Ok(Some(BTreeMap::from([
            (Role::Train, tr),
            (Role::Val, v),
            (Role::Test, te),
        ]))),
        _ => Err(usage(
            "give all of --target-train/--target-val/--target-test or none",
        )),
    }
}

fn build_spec(
    protocol: &str,
    seed: u64,
    val_fraction: Option<f64>,
    ccpd_val_target: Option<usize>,
    targets: Option<BTreeMap<Role, usize>>,
    config: &CliConfig,
) -> Result<SplitSpec, Failure> {
    let protocol: Protocol = protocol
        .parse()
        .map_err(|e| usage(format!("--protocol: {e}")))?;
    let mut spec = SplitSpec::new(protocol, seed);
    if let Some(f) = val_fraction.or(config.val_fraction) {
        spec.val_fraction = f;
    }
    spec.ccpd_val_target = ccpd_val_target;
    spec.targets = targets;
    Ok(spec)
}

fn run_fair_split(args: FairSplitArgs, config: &CliConfig) -> Result<(), Failure> {
    let targets = gather_targets(args.target_train, args.target_val, args.target_test)?;
    let spec = build_spec(
        &args.protocol,
        args.seed,
        args.val_fraction,
        args.ccpd_val_target,
        targets,
        config,
    )?;
    let manifest = load_manifest(&args.manifest).map_err(|e| at_path(&args.manifest, e))?;
    let assignment = generate_split(&manifest, &spec).map_err(invalid)?;
    emit_split_files(&assignment, &args.out).map_err(invalid)?;
    let counts = |role| assignment.counts.get(&role).copied().unwrap_or(0);
    println!(
        "{}: train {} val {} test {} excluded {} -> {}",
        assignment.protocol,
        counts(Role::Train),
        counts(Role::Val),
        counts(Role::Test),
        assignment.excluded.len(),
        args.out.display()
    );
    for note in &assignment.notes {
        eprintln!("note: {note}");
    }
    Ok(())
}

fn run_verify(args: VerifyArgs, config: &CliConfig) -> Result<(), Failure> {
    let manifest = load_manifest(&args.manifest).map_err(|e| at_path(&args.manifest, e))?;
    let assignment =
        load_split_dir(&args.split_dir).map_err(|e| at_path(&args.split_dir, e))?;
    let targets = gather_targets(args.target_train, args.target_val, args.target_test)?;
    let protocol = args.protocol.as_deref().unwrap_or(&assignment.protocol);
    let spec = build_spec(
        protocol,
        assignment.seed,
        args.val_fraction,
        args.ccpd_val_target,
        targets,
        config,
    )?;
    let groups = build_groups(&[&manifest]).map_err(invalid)?;
    let report = verify_split(&manifest, &groups, &assignment, &spec);
    print!("{}", format_verification(&report));
    if report.passed() {
        Ok(())
    } else {
        Err(invalid(format!(
            "split at {} failed verification",
            args.split_dir.display()
        )))
    }
}

fn run_overlap(args: OverlapArgs, config: &CliConfig) -> Result<(), Failure> {
    if args.manifest.len() != 2 {
        return Err(usage(format!(
            "overlap compares exactly two manifests, got {}",
            args.manifest.len()
        )));
    }
    let format = pick_format(&args.format, config)?;
    let canonical_size = pick_canonical_size(&args.canonical_size, config)?;
    let threshold = args.threshold.or(config.threshold);
    let roots = parse_roots(&args.images_root)?;
    let manifests = load_manifests(&args.manifest)?;

    let pairs = if roots.is_empty() {
        cross_dataset_overlap(&manifests[0], &manifests[1], threshold, &NoPixels)
    } else {
        let source = DirPlateSource::new(roots, canonical_size);
        cross_dataset_overlap(&manifests[0], &manifests[1], threshold, &source)
    }
    .map_err(invalid)?;

    let mut doc = AuditDocument::new();
    doc.inputs = digests(&args.manifest)?;
    doc.overlap = Some(OverlapSection {
        dataset_a: manifests[0].dataset_id.clone(),
        dataset_b: manifests[1].dataset_id.clone(),
        threshold,
        pairs,
    });
    emit_document(&doc, format, &args.out)
}

fn run_synth(args: SynthArgs) -> Result<(), Failure> {
    let mut config =
        SynthConfigFile::load(&args.config).map_err(|e| at_path(&args.config, e))?;
    if let Some(count) = args.count {
        config.count = count;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let config_dir = args
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let out_dir = args.out.clone().unwrap_or_else(|| config.out_dir(&config_dir));
    let job = config.into_job(&config_dir).map_err(|e| at_path(&args.config, e))?;
    std::fs::create_dir_all(&out_dir).map_err(|e| at_path(&out_dir, e))?;
    for index in 0..job.count {
        let plate = generate_one(&job, index).map_err(invalid)?;
        let mut bytes: Vec<u8> = Vec::new();
        plate
            .image
            .write_to(
                &mut std::io::Cursor::new(&mut bytes),
                leakaudit::image::ImageFormat::Png,
            )
            .map_err(invalid)?;
        write_atomic(&out_dir.join(plate.filename()), &bytes).map_err(invalid)?;
    }
    println!("wrote {} plates to {}", job.count, out_dir.display());
    Ok(())
}

fn run_metrics(args: MetricsArgs) -> Result<(), Failure> {
    if args.orig.len() != args.fair.len() {
        return Err(usage(format!(
            "unpaired accuracies: {} --orig values, {} --fair values",
            args.orig.len(),
            args.fair.len()
        )));
    }
    for (orig, fair) in args.orig.iter().zip(args.fair.iter()) {
        let m = gap_metrics(*orig, *fair)
            .map_err(|e| invalid(format!("orig {orig} fair {fair}: {e}")))?;
        println!(
            "orig {:.2}  fair {:.2}  gap {:.2}  rel-gap {:.1}",
            m.acc_orig, m.acc_fair, m.gap, m.rel_gap
        );
    }
    Ok(())
}
