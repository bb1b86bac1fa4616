//! Synergistic multi-spectral CT reconstruction.
//!
//! Forward/adjoint X-ray projection on a pixel grid, TV and directional-TV
//! regularization driven by a side-information image, forward-backward
//! splitting and linearized Bregman solvers with backtracking, Poisson
//! photon-count simulation, image quality metrics, and a batch pipeline with
//! a TOML configuration front end.
//!
//! Core numerics are generic over the scalar type via the [`Real`] trait
//! (`f32` or `f64`); the simulation, I/O, and pipeline layers are `f64`.

pub mod config;
pub mod diffops;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod optimizers;
pub mod pipeline;
pub mod projector;
pub mod prox;
pub mod regularizers;
pub mod scalar;
pub mod sim;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use scalar::Real;

/// Default-precision image, as produced by the simulation and I/O layers.
pub type Image = grid::ImageGrid<f64>;
/// Single-precision image.
pub type ImageF32 = grid::ImageGrid<f32>;
/// Default-precision sinogram.
pub type SinogramF64 = geometry::Sinogram<f64>;
/// Single-precision sinogram.
pub type SinogramF32 = geometry::Sinogram<f32>;
/// Default-precision per-pixel vector field (gradients, dual variables).
pub type Field = diffops::VectorField<f64>;
/// Single-precision vector field.
pub type FieldF32 = diffops::VectorField<f32>;
