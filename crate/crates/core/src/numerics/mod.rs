//! Dense-matrix kernels: storage, SVD, nuclear norm and its subgradient,
//! effective rank.

mod matrix;
mod svd;

pub use matrix::{dot, norm, Matrix};
pub use svd::{
    effective_rank, nuclear_norm, nuclear_norm_subgradient, orthonormalize_columns, svd,
    symmetric_eigenvalues, Svd, CONVERGENCE_TOL, DEFAULT_RANK_TOL, MAX_SWEEPS,
};
pub(crate) use svd::subgradient_from;
