//! Datasets, augmentation, cross-dataset protocols and the synthetic
//! desk-scale generator.

pub mod augment;
pub mod manifest;
pub mod pipeline;
pub mod protocol;
pub mod synth;

pub use augment::{augment, AugmentationConfig};
pub use manifest::{load_manifest, load_manifest_with_root, DatasetManifest, ManifestEntry, DATA_ROOT_ENV};
pub use pipeline::{load_samples, Preprocess, Sample};
pub use protocol::{registry, resolve, Domain, ProtocolKind, ProtocolSpec, RegisteredProtocol};
pub use synth::{synth_generate, synth_image, DomainSummary, SynthOutput, SynthSpec, SYNTH_SIZE};
