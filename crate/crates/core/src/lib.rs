//! Dataset tooling and a reference classifier for direct-examination
//! fungal microscopy: tile source photographs into patches, screen out dark
//! and blank patches, assign stratified splits or k-fold plans, train and
//! evaluate a small CNN, and summarize per-fold results.

pub mod augment;
pub mod dataset;
pub mod filter;
pub mod harness;
pub mod imaging;
pub mod metrics;
pub mod model;
pub mod patcher;
pub mod rng;
pub mod synth;

pub use dataset::{ClassLabel, DatasetError, Manifest, ManifestRow, Split, Verdict};
pub use imaging::{ImageBuffer, ImagingError, Rect};
pub use rng::SeededStream;
