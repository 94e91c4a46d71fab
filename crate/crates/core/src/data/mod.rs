//! Manifests, segmentation, the tensor container format and synthetic
//! planted-signal datasets.

mod dataset;
mod manifest;
mod segment;
mod synthetic;
pub mod tensor_io;

pub use dataset::{build_examples, load_examples, target_for, TensorCache};
pub use manifest::{
    load_manifest, manifest_to_string, parse_manifest, save_manifest, Manifest, SampleRecord, SegmentSource, TensorRef,
};
pub use segment::{segment_stream, split_media, SegmentBounds, SegmentMedia, MIN_TAIL_S};
pub use synthetic::{
    generate_synthetic, write_synthetic, SyntheticData, SyntheticMode, SyntheticSpec, SyntheticSplit, LABEL_KEY,
    RECENT_SEGMENTS,
};
pub use tensor_io::{read_tensors, write_tensors, AnyTensor};
