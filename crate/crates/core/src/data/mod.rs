//! Manifest ingestion, dataset preparation and binary persistence.

mod checkpoint;
pub mod container;
mod dataset;
mod manifest;

pub use checkpoint::Checkpoint;
pub use dataset::{
    prepare, split_counts, LabeledDataset, LabeledSample, Normalization, SampleLabels, Split,
    TEST_FRACTION, VAL_FRACTION,
};
pub use manifest::{ingest, write_manifest, Manifest, ManifestEntry, MANIFEST_VERSION};
