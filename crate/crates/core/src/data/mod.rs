//! Datasets on disk, synthetic scenes, PNG output and checkpoints.

mod checkpoint;
mod dataset;
mod io;
mod sample;
mod synth;

pub use checkpoint::{
    checkpoint_dtype, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CheckpointMeta, FORMAT_VERSION, MAGIC,
};
pub use dataset::{load_dataset, DatasetManifest, Split, SUBDIRS};
pub use io::{load_label, load_rgb, save_mask, save_normalized, save_prediction, save_rgb};
pub use sample::{collate, Image, SamplePair};
pub use synth::{
    generate_sample, generate_synthetic, sample_file, ShapeKind, SyntheticSample, SyntheticShape, SyntheticSpec,
};
