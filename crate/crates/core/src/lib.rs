//! Hashing-based estimators for kernel density queries.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod estimation;
pub mod hbe;
pub mod kernels;
pub mod kmvm;
pub mod lsh;
pub mod numeric;
pub mod seed;

pub use error::{HbeError, Result};
pub use kernels::{eval_kernel, kde_exact, normalize_bandwidth, KernelKind, KernelSpec, PointSet};
