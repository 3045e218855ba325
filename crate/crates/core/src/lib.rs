//! Fibers as functional varifolds: kernel inner products between space curves
//! carrying an along-curve scalar signal, Gram matrix assembly (exact and
//! Nyström-approximated), kernelized dictionary learning with non-negative
//! sparse coding, and clustering evaluation (silhouette, adjusted Rand index).

pub mod dictionary;
pub mod evaluation;
pub mod gram;
pub mod io;
pub mod kernels;
pub mod model;

pub use dictionary::{fit, objective, Dictionary, FitConfig, FitResult, SparseCodes};
pub use evaluation::{
    adjusted_rand_index, hard_assign, silhouette, ClusterAssignment, SilhouetteReport,
};
pub use gram::{compute_gram, kernel_distance, nystrom_gram, GramMatrix};
pub use kernels::{
    cosine_angle, fvar_inner, mcp_distance, mcp_rbf, signal_inner, var_inner, KernelModel,
    KernelParams,
};
pub use model::{segment, synthesize, Fiber, SegmentedFiber, SignalProfile, SyntheticBundleSpec};
