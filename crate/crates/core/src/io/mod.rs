//! Files in and out: datasets, PNG, PLY, checkpoints, configs, and the
//! synthetic scenes.

mod checkpoint;
mod colmap;
mod config;
mod dataset;
mod ply;
mod png_io;
mod synth;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use colmap::{load_colmap_model, parse_cameras, parse_images, parse_points, ColmapCamera, ColmapImage, ColmapModel};
pub use config::{load_config, read_config_file, write_config_echo};
pub use dataset::{load_dataset, CameraRecord, Dataset, TEST_EVERY};
pub use ply::{load_ply, read_ply, save_ply, write_ply};
pub use png_io::{from_byte, read_png, to_byte, write_png};
pub use synth::{
    ground_truth, specular_color, synth_cameras, synth_dataset, GroundTruth, SynthScene, SynthSpec, SynthSummary,
    LIGHT_AXIS, LOBE_EXPONENT, LOBE_STRENGTH,
};
