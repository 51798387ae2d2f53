//! Datasets, the synthetic scene generator, PNG I/O and checkpoints.

mod checkpoint;
mod dataset;
mod image_io;
mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dataset::{load_dataset, write_manifest, DatasetFrame, ManifestFrame, PoseFile, SceneDataset, Split};
pub use image_io::{composite_background, load_image, write_png, write_rgba_png};
pub use synth::{generate_synthetic, BlobSpec, GroundTruth, GtFrame, GtGaussian, SynthSpec};
