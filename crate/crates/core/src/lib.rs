//! Numerical core for reconstructing radiance fields with dense voxel grids.
//!
//! Everything here is pure computation over `alloc` buffers: grid storage and
//! trilinear sampling, the volume-rendering quadrature with hand-written
//! adjoints, the coarse and fine scene models, losses, Adam, the closed-form
//! sharp-surface grid constructions and the 2D activation-ordering toy.
//! File formats, datasets, threading and the CLI live in the `voxfield` crate.

#![no_std]

extern crate alloc;

pub mod closedform;
pub mod error;
pub mod grid;
pub mod image;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod mlp;
pub mod optim;
pub mod raymarch;
pub mod render;
pub mod scene;
pub mod stage;
pub mod toy;

pub use error::{Error, Result};
pub use grid::{Bbox3, DenseGrid, Stencil, VoxelBudget};
pub use math::Vec3;
pub use render::{ActivationBias, ActivationMode, Camera, Ray, RenderResult, SampleBatch};
