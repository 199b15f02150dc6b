//! Datasets, synthetic ground-truth scenes, cloud initialization and image IO.

pub mod dataset;
pub mod imageio;
pub mod init;
pub mod synth;

pub use dataset::{load_dataset, split_indices, MultiModalFrame, RgbtDataset};
pub use init::{init_cloud, perturb_net, InitMode};
pub use synth::{synth_scene, write_synth, SynthKind, SynthScene, SynthSpec};
