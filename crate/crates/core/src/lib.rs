//! Zero-shot learning with sparse, sample-wise compositions of base linear
//! networks regularized toward orthogonal, low-rank class subspaces.
//!
//! The crate is organized bottom-up:
//!
//! * [`numerics`]: dense matrices, Jacobi SVD, nuclear norm and subgradient.
//! * [`data`]: datasets, semantic descriptors, PMX1/manifest I/O, synthetic data.
//! * [`model`]: the gated composite predictor and class prediction.
//! * [`indicators`]: tied-weight encoder and top-k variance gates.
//! * [`geometry`]: the intra/inter-class nuclear-norm objective and checks of
//!   the concatenation inequalities behind it.
//! * [`solver`]: the joint subgradient trainer and the ε-SVR dual path.
//! * [`eval`]: per-class accuracy, ZSL and GZSL reports.

pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod indicators;
pub mod kv;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod solver;

pub use error::{Error, ErrorKind, Result};
pub use numerics::Matrix;
