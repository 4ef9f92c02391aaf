//! Utility-maximizing probabilistic k-stage selection under per-stage budget
//! constraints and demographic-parity / equal-opportunity fairness constraints.
//!
//! The crate is organized around a pipeline:
//!
//! * [`model`] — feature spaces, joint distributions, stage plans, budgets,
//!   fairness specifications and policies, with all validation.
//! * [`lp`] — a self-contained dense simplex solver for box-bounded linear
//!   programs with inequality and equality rows.
//! * [`policy`] — assembly of the selection problem as a linear program in
//!   cumulative pass-probability variables, and policy recovery.
//! * [`metrics`] — policy evaluation (precision, selection rates, fairness
//!   gaps) and the price / violation of local fairness.
//! * [`montecarlo`] — finite-cohort simulation of a policy and convergence
//!   measurements against the expected-value model.
//!
//! All types are immutable after construction and all operations are pure
//! functions, so independent optimizations and simulations can run
//! concurrently without coordination.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod lp;
mod math;
pub mod metrics;
pub mod model;
pub mod montecarlo;
pub mod policy;

pub use lp::{LpProblem, LpRow, LpSolution, LpStatus, Relation, SolverConfig};
pub use model::{
    Budgets, Criterion, FairnessSpec, FeatureSpace, JointDistribution, Policy, Scope,
    SensitivePlacement, StagePlan,
};
pub use policy::{optimize, Optimized, VariableLayout};
