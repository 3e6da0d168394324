//! Conditional diffusion repair of fractured point clouds.
//!
//! The pipeline: sample meshes into clouds, cut them into broken/repair
//! triplets, train a noise predictor conditioned on the broken part, sample
//! repairs by running the reverse chain, and score them with distance factors.

pub mod augment;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod denoiser;
pub mod diffusion;
pub mod distance;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod shapes;
pub mod spatial;
pub mod train;

pub use error::{Error, Result};
