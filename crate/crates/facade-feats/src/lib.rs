//! Point-cloud toolkit for facade-level classification.
//!
//! Computes covariance-based geometric features (planarity, omnivariance,
//! surface variation, PCA eigenvalues, second eigenvector) over fixed-radius
//! neighborhoods, trains a Random Forest with Gini feature importance, scores
//! predictions against ground truth, and exports early-fusion feature tables
//! (`x,y,z + N_f features + label`) for downstream point networks.

// 3×3 matrix code reads better with explicit index loops.
#![allow(clippy::needless_range_loop)]

pub mod downsample;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod fusion_export;
pub mod io;
pub mod pipeline;
pub mod random_forest;
pub mod spatial_index;
pub mod synthetic;

pub use error::{Error, Result};
pub use io::LabeledPointCloud;

/// Toolkit version stamped into file headers and provenance blocks.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
