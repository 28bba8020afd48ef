//! Joint estimation of subject-specific linear SEM DAGs with structure-aware
//! clustering.
//!
//! Each subject `i` contributes an `m_i x d` data matrix `X_i`. The solver fits
//! one weighted adjacency matrix `W_i` per subject under a sparsity penalty, a
//! truncated group-lasso fusion penalty on pairwise differences, and the
//! trace-exponential acyclicity constraint. The truncated penalty is handled
//! by difference-of-convex iterations, each solved by a Gauss-Seidel ADMM.
//! Subjects are then clustered by complete linkage on the fitted differences.
//!
//! Module map:
//!
//! * [`matfun`] matrix exponential and the acyclicity function
//! * [`sem`] subject data, Gram caching and the reconstruction loss
//! * [`datagen`] synthetic cluster DAGs and SEM simulation
//! * [`boxopt`] projected limited-memory quasi-Newton for box constraints
//! * [`single_dag`] augmented-Lagrangian single DAG learner and baselines
//! * [`dc_admm`] the fused DC/ADMM solver
//! * [`clustering`] dissimilarities, complete-linkage cut, consensus matrices
//! * [`metrics`] clustering and edge recovery metrics
//! * [`harness`] cross-validation, grid search, experiments and file formats

pub mod boxopt;
pub mod clustering;
pub mod datagen;
pub mod dc_admm;
pub mod error;
pub mod harness;
pub mod matfun;
pub mod metrics;
pub mod sem;
pub mod single_dag;

pub use error::{Error, Result};

/// Dense real matrix used for adjacency matrices, Gram matrices and data.
pub type Matrix = nalgebra::DMatrix<f64>;
