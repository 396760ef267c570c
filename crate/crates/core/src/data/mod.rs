//! Training data: synthetic sequences, the curation pipeline that turns
//! triple-frame groups into a manifest of stored samples, and on-the-fly
//! augmentation of those samples into training examples.

mod augment;
mod flow;
mod manifest;
mod pipeline;
mod select;
mod synthetic;

pub use augment::{augment_sample, center_sample, Augmentation, Dataset, StoredSample};
pub use flow::{block_matching_flow, FlowField, FlowParams};
pub use manifest::{DatasetManifest, ManifestRecord, MANIFEST_MAGIC};
pub use pipeline::{
    build_dataset, load_triples, select_samples, Candidate, PipelineParams, Selection, StageCounts,
};
pub use select::{
    histogram_distance, patch_entropy, shot_boundary, weighted_sample, SHOT_THRESHOLD,
    WEIGHT_EPSILON,
};
pub use synthetic::{
    generate_corpus, generate_synthetic_sequence, CorpusSpec, Layer, MotionTruth, Rect, SceneSpec,
    Texture, TripleGroup,
};
