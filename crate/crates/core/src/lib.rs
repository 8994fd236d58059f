//! Data handling for facial-expression-recognition experiments.
//!
//! The crate covers everything that does not need a neural network:
//!
//! - [`registry`]: manifest ingestion for KDEF, CK+ and JAFFE, filtering,
//!   and composition of the augmented training sets.
//! - [`preprocess`]: face cropping, 224×224×3 standardization and the
//!   per-consumer pixel normalizations.
//! - [`augment`]: the six label-preserving geometric/colour transforms and
//!   the seeded offline expansion.
//! - [`evaluation`]: confusion matrices, per-class precision/recall,
//!   aggregation over runs, stratified k-fold partitions and the evaluation
//!   suites driven through the [`evaluation::Classifier`] trait.
//! - [`fixture`]: deterministic synthetic face-like datasets used in tests.
//!
//! Manifests are line-delimited JSON; see [`manifest`] for the schema.

pub mod augment;
pub mod error;
pub mod evaluation;
pub mod fixture;
pub mod image;
pub mod label;
pub mod manifest;
pub mod preprocess;
pub mod registry;
pub mod report;
pub mod seed;

pub use error::{Error, Result};
pub use label::EmotionLabel;
pub use manifest::{DatasetManifest, ImageRecord, Source};
