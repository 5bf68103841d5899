//! Leakage auditing toolkit for labeled license-plate image datasets.
//!
//! Near-duplicates are different images of the same plate, recognized by an
//! identical normalized plate string. The crate groups images by that key,
//! audits train/test splits for leakage, generates duplicate-free fair
//! splits under three named protocols plus a generic group-atomic splitter,
//! rectifies annotated plates for pixel-space distance ranking, computes
//! the gap metrics used to compare original and fair protocols, and
//! synthesizes augmentation plates deterministically.
//!
//! Module map:
//! - [`model`]: manifest schema, plate normalization, CCPD filename grammar
//! - [`geometry`]: homography rectification and pixel distance
//! - [`audit`]: duplicate grouping, leakage reports, overlap, metrics
//! - [`split`]: fair-split protocols and verification
//! - [`synth`]: deterministic synthetic plate generation
//! - [`report`]: audit documents, split files, gallery emission

pub mod audit;
pub mod geometry;
pub mod model;
pub mod report;
pub mod split;
pub mod synth;

/// Re-exported so downstream code can use the same raster types without
/// pinning its own copy of the image crate.
pub use image;

/// Version stamped into reports and split sidecars.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
