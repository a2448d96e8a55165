//! Centered self Khatri-Rao measurement ensembles.
//!
//! Each column of the measurement operator is the centered, rescaled
//! outer product `√κ · vec(a aᵀ − I)` of an isotropic random vector `a ∈ ℝⁿ`.
//! The crate samples these operators, estimates their restricted isometry
//! constants, runs sparse-recovery solvers on them and measures the tails of
//! the quadratic forms that drive the theory.
//!
//! ```
//! use krrip::{sample_matrix, DistributionSpec, KrOperator, Mode, Representation};
//!
//! let a = sample_matrix(&DistributionSpec::rademacher(), 4, 20, 7).unwrap();
//! let op = KrOperator::build(a, Mode::Centered, Representation::Explicit).unwrap();
//! assert_eq!(op.rows(), 16);
//! ```

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod ensembles;
pub mod error;
pub mod kr_operator;
pub mod recovery;
pub mod rip;
pub mod rng;
pub mod tails;

pub use ensembles::{fourth_moment, sample_column, sample_matrix, ColumnMatrix, DistributionSpec, Family};
pub use error::{Error, Result};
pub use kr_operator::{kappa, KrOperator, Mode, Representation};
pub use recovery::{fista_lasso, iht, synth_problem, FistaParams, IhtParams, RecoveryProblem, RecoveryResult};
pub use rip::{
    delta_exact, delta_greedy, delta_monte_carlo, sparsity_budget, theory_bound, Method, RipEstimate,
    SupportSet, TheoryBoundParams,
};
pub use tails::{norm_concentration_experiment, sample_marginals, tail_report, Direction, DirectionKind};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/ensembles.md")]
    mod ensembles {}
    #[doc = include_str!("../../../book/src/operator.md")]
    mod operator {}
    #[doc = include_str!("../../../book/src/rip.md")]
    mod rip {}
    #[doc = include_str!("../../../book/src/recovery.md")]
    mod recovery {}
    #[doc = include_str!("../../../book/src/tails.md")]
    mod tails {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
    #[doc = include_str!("../../../book/src/output.md")]
    mod output {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    mod reproducibility {}
}
