//! Multicore tiled QR factorization.
//!
//! The working matrix is stored in block data layout ([`TiledMatrix`]), the
//! factorization runs as a set of square-tile Householder kernels
//! ([`kernels`]) driven either by the sequential triple loop or
//! asynchronously by a dependency graph with critical-path priorities
//! ([`dag`], [`driver`]). Baseline factorizations, analytic flop models and
//! quality metrics live in [`reference`]; [`trace`] records per-worker
//! timelines of the parallel runs.
//!
//! Parallel execution is bitwise deterministic: the task graph totally
//! orders every pair of conflicting tile accesses, so any worker count and
//! any interleaving produce the same bits as the sequential loop.

pub mod dag;
pub mod dense;
pub mod driver;
pub mod error;
pub mod io;
pub mod kernels;
pub mod reference;
pub mod storage;
pub mod trace;

pub use dag::{build_dag, priority_of, Task, TaskGraph};
pub use dense::DenseMatrix;
pub use driver::{tiled_qr_parallel, tiled_qr_parallel_opts, tiled_qr_sequential, FactorSet};
pub use error::{Error, Result};
pub use kernels::{
    geqt2, house_gen, kernel_flop_thirds, kernel_flops, larfb_apply, larft_accumulate, ssrfb_apply,
    tsqt2, KernelKind, Reflector, TFactor,
};
pub use reference::{
    backward_error, blocked_qr, house_qr_unblocked, model_flops_blocked, model_flops_tiled,
    normalize_r_signs, orthogonality_error, FlopAlgorithm, FlopModel, QrFactorization,
    UnblockedFactors, BACKWARD_ERROR_FACTOR,
};
pub use storage::TiledMatrix;
pub use trace::{ExecutionTrace, TraceRecord, TraceSummary};
