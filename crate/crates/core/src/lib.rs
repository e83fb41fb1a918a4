//! Metric-learning classifiers built on boundary trees and boundary sets.
//!
//! A small feed-forward network embeds inputs, and classification happens by
//! nearest-neighbour style search in the embedding space. Two training
//! objectives are provided: one votes over a boundary set built on each
//! batch, the other over the final node of a boundary tree traversal.

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod dataset;
pub mod dbs;
pub mod dbt;
pub mod error;
pub mod eval;
pub mod metric;
pub mod nn;
pub mod records;
pub mod rng;
pub mod set;
pub mod softvote;
pub mod training;
pub mod tree;

pub use error::{Error, Result};
pub use metric::{LabeledPoint, Vector};
pub use set::BoundarySet;
pub use training::{Algorithm, TrainConfig};
pub use tree::{BoundaryForest, BoundaryTree};
