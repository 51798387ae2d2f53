//! Deformable 3D Gaussian splatting on the CPU.
//!
//! A canonical cloud of anisotropic Gaussians is deformed per timestamp by a
//! positional-encoding MLP and rendered by a tile-based differentiable
//! rasterizer. Every backward pass is analytic and has a 64-bit
//! finite-difference oracle in [`gradcheck`].

pub mod deform;
pub mod density;
pub mod error;
pub mod geom;
pub mod gradcheck;
pub mod optim;
pub mod pipeline;
pub mod raster;
pub mod real;
pub mod scene;
pub mod trainer;

pub use error::{Error, Result};
pub use real::Real;
