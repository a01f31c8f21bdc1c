//! Multi-scale structured-sparsity learning over gridded signals.
//!
//! The pipeline has five stages:
//!
//! 1. [`grid`] — grid masks and voxel adjacency (the spatial contiguity
//!    constraint).
//! 2. [`cluster`] — spatially-constrained Ward agglomeration producing a
//!    binary merge tree of `2p - 1` nodes over `p` voxels.
//! 3. [`feature`] — the augmented design (voxels plus parcel averages) and
//!    projections of fitted coefficients back to voxel maps, globally or per
//!    tree depth.
//! 4. [`penalty`] / [`loss`] / [`solver`] — hierarchical group norms with
//!    exact proximal operators, smooth losses with Lipschitz bounds, and
//!    accelerated forward-backward (FISTA) fitting for every loss × penalty
//!    combination.
//! 5. [`datagen`] / [`harness`] — the synthetic benchmark generator and the
//!    cross-validation / model-comparison machinery (λ grids, paired Wilcoxon
//!    tests).
//!
//! File formats shared with the `treesparse` CLI live in [`io`].

pub mod cluster;
pub mod datagen;
pub mod error;
pub mod feature;
pub mod grid;
pub mod harness;
pub mod io;
pub mod loss;
pub mod penalty;
pub mod rng;
pub mod solver;

pub use cluster::{ward_cluster, ward_delta, ClusterTree};
pub use error::{Error, Result};
pub use feature::{augment, project_to_voxels, scale_slice};
pub use grid::{Adjacency, GridMask};
pub use loss::{Dataset, LossKind, Targets};
pub use penalty::{GroupStructure, NormFlavor};
pub use solver::{fit_model, predict, FitResult, ModelSpec, PenaltyKind, SolverConfig};
