//! Dataset manifests, mask encoding, synthetic data and labeled/unlabeled splits.

mod manifest;
mod rle;
mod split;
mod synthetic;

pub use manifest::{
    read_image, write_image, DatasetManifest, DatasetSource, ManifestRecord, SplitTag, MANIFEST_FILE, METADATA_FILE,
};
pub use rle::Rle;
pub use split::{labeled_count, make_split, SemiSplit};
pub use synthetic::{
    generate_scene, make_synthetic, Shape, ShapeColor, ShapeKind, ShapeQuery, Side, SyntheticScene, SyntheticSpec,
};
