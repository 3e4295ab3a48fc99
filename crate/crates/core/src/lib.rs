//! Geometry-guided embedding calibration.
//!
//! The crate extracts the covariance eigenstructure ("geometric shape") of
//! per-class embedding distributions, reconstructs global class covariances
//! from per-client summary statistics, and uses the resulting shapes to
//! synthesize embeddings for under-represented classes, either ahead of
//! training or inside the training loop.
//!
//! Samples are stored as rows. Storage is `f32`; every covariance, eigen and
//! training computation runs in `f64`.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, configuration
//! and the experiment driver live in the `geocal` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod aggregate;
pub mod analysis;
pub mod augment;
pub mod calibrate;
pub mod eigen;
pub mod embedding;
mod error;
pub mod geometry;
pub mod math;
pub mod matrix;
pub mod model;
pub mod partition;
pub mod rng;
pub mod synth;

pub use aggregate::{aggregate_global, build_shape_bank, ClientUpload, GlobalClassStats, ShapeBank};
pub use augment::{AugmentPlan, ScaleMode};
pub use calibrate::{KnowledgeBase, TailPolicy};
pub use embedding::{EmbeddingSet, RowOrigin};
pub use error::{Error, Result};
pub use geometry::{ClassStats, CovarianceMode, GeometricShape, Prototype};
pub use matrix::Matrix;
pub use model::{Architecture, ClassifierParams, EvalReport, TrainConfig};
pub use partition::{PartitionKind, PartitionSpec};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Default number of retained principal directions.
pub const DEFAULT_M: usize = 5;
