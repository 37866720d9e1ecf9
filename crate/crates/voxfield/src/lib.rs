//! Datasets, file formats, the two-stage training pipeline and the CLI for
//! dense voxel-grid radiance fields. The numerics live in `voxfield_core`.

pub mod analytic;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod formats;
pub mod image_io;
pub mod train;

pub use config::TrainConfig;
pub use dataset::{Dataset, PosedImage, Split};
pub use error::{Error, Result};
