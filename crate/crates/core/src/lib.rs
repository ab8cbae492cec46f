//! Solvers for composite convex problems of the form
//!
//! ```text
//! min_x  (1/n) Σ_i f_i(x) + g(Bx)
//! ```
//!
//! where the `f_i` are smooth convex losses over data samples, `g` is a
//! convex (possibly nonsmooth) regularizer with a cheap proximal map and
//! `B` is a linear operator. The crate provides the deterministic
//! primal-dual fixed point method (PDFP), a plain stochastic variant
//! (SPDFP) with diminishing steps, and SVRG-PDFP — the variance-reduced
//! variant in both its strongly convex and general convex forms —
//! together with the diagnostics (Bregman convergence functional,
//! variance constants, step-size validation) needed to check the
//! convergence guarantees numerically.

pub mod data;
pub mod linops;
pub mod metrics;
pub mod objective;
pub mod prox;
pub mod solvers;

pub(crate) mod vecmath;

pub use linops::{DenseMatrix, LinOpError, LinearMap, SpectralEstimate};
pub use metrics::{ReferenceSolution, RunTrace, TraceMetrics, TraceRow};
pub use objective::{BatchScheme, FiniteSum, SvrgAnchor, VarianceConstants};
pub use prox::{ConjugateInfo, ProxFn};
pub use solvers::{ProblemSpec, SolverParams, ValidationReport, Variant};
