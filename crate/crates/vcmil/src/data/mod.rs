//! Dataset plumbing: binary feature files, manifests, 32-segment pooling and
//! its inverse, paired class iteration, and a synthetic generator.

mod features;
mod iter;
mod manifest;
mod segment;
mod synth;

pub use features::{
    l2_normalize_features, load_features, save_features, FeatureMatrix, FeatureSequence, Label,
};
pub use iter::PairedIterator;
pub use manifest::{load_gt, load_manifest, load_split, save_manifest, Manifest, ManifestEntry, Split};
pub use segment::{inverse_segment, pooling_matrix, segment, SegmentedVideo, NUM_SEGMENTS};
pub use synth::{generate as synth_generate, SynthConfig, FRAMES_PER_SNIPPET};
