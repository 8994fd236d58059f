//! Neural-network side of the pipeline on a CPU tensor backend: backbone
//! graphs, the 7-way classifier with two-stage fine-tuning, and the
//! per-emotion DCGAN.

pub mod backbones;
pub mod classifier;
pub mod dcgan;
pub mod error;
pub mod graph;
pub mod ops;
pub mod weights;

pub use error::{Error, Result};
