//! File formats: binary weight files, the TOML run configuration, CSV tables
//! and image files.

mod config;
mod image;
mod tables;
mod weights;

pub use self::config::{EvalConfig, ModelConfig, RenderConfig, RunConfig};
pub use self::image::{load_image, save_image, tile};
pub use self::tables::{
    read_keypoints, read_motion, write_curve, write_keypoints, write_motion, MOTION_COLUMNS,
};
pub use self::weights::{
    load_mlp, mlp_from_tensors, mlp_tensors, read_tensors, save_mlp, write_tensors, NamedTensor,
    FORMAT_VERSION, MAGIC,
};
