//! Feature files, manifests, splits and the synthetic dataset generator.

pub mod feature_file;
mod manifest;
mod sample;
mod split;
mod synth;

pub use manifest::{feature_path, write_dataset, Manifest, ManifestRecord, MANIFEST_NAME};
pub use sample::{FeatureSequence, UtteranceSample};
pub use split::{split, Split, SplitPolicy};
pub use synth::{generate, generate_to_dir, SynthSpec};
