//! Datasets: manifests, class splits, pair sampling, preprocessing and the
//! synthetic shape generator.

pub mod manifest;
pub mod preprocess;
pub mod sampler;
pub mod split;
pub mod synthetic;

pub use manifest::{load_manifest, DatasetManifest, ManifestEntry};
pub use preprocess::{load_rgb, preprocess, ImageCache};
pub use sampler::{grid_to_pixel, pixel_to_grid, DetectionSample, Instance, PairSample, PairSampler};
pub use split::{validate_split, ClassSplit, Side, SplitViolation, VOC_CLASSES};
pub use synthetic::{generate_synthetic, SyntheticShapeConfig};
