//! Accelerated distributed randomized coordinate descent for composite
//! convex problems of the form `min_x f(x) + sum_i R_i(x_i)`, where `f`
//! admits a quadratic upper bound driven by a sparse matrix `A`.
//!
//! The crate provides:
//!
//! - [`sparsemat`]: sparse matrix storage with dual row/column traversal,
//!   uniform column partitioning across `c` nodes, and the per-row
//!   structural statistics (`omega`, `omega_prime`) that drive stepsizes;
//! - [`stepsize`]: the four admissible diagonal stepsize rules `D1`-`D4`
//!   together with their scalar ingredients (`alpha_star`, `beta_star`,
//!   `sigma`, `sigma_prime`, `sigma_tilde`), including power-iteration
//!   estimation of the spectral quantities;
//! - [`problems`]: concrete composite objectives (LASSO, SVM dual) with
//!   residual-based partial derivatives and closed-form proximal steps;
//! - [`sampling`]: the distributed tau-nice sampling (each of `c` nodes
//!   picks `tau` of its `s` coordinates uniformly) plus an exhaustive
//!   enumerator used by tests;
//! - [`solver`]: the accelerated method (`hydra2` mode), its
//!   non-accelerated reduction (`hydra` mode), and the iteration-bound
//!   calculator;
//! - [`distributed`]: a multi-worker execution harness with a transport
//!   abstraction (in-process channels and TCP), deterministic delta
//!   merging, and checksum barriers;
//! - [`formats`]: binary matrix/stepsize file formats and JSON manifests;
//! - [`synth`]: a block-angular synthetic instance generator;
//! - [`svmlight`]: an svmlight/libsvm text format parser.

pub mod distributed;
pub mod formats;
pub mod kahan;
pub mod problems;
pub mod sampling;
pub mod sparsemat;
pub mod solver;
pub mod stepsize;
pub mod synth;
pub mod svmlight;

pub use problems::{CompositeLoss, CompositeProblem, Regularizer, Residuals};
pub use sampling::{DistributedSample, DistributedSampler};
pub use sparsemat::{MatrixError, Partition, RowStats, SparseMatrix};
pub use solver::{IterationBound, Mode, SolveError, SolverConfig, SolverState, Trace};
pub use stepsize::{EsoParams, Rule, StepsizeError, StepsizeVector};
