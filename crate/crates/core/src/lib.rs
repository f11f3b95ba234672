//! Successive convexification (SCvx) speed and path planning for an
//! autonomous vehicle.
//!
//! The vehicle is described by a kinematic single-track model expressed in
//! road-aligned error coordinates and parametrized by arc length instead of
//! time. Each SCvx iteration linearizes the dynamics about the previous
//! trajectory, discretizes them with a first-order hold, and hands a
//! second-order cone program to a [`program::ConicSolver`]. Virtual control,
//! a scheduled trust region, and continuous state-triggered constraints keep
//! the sequence of convex subproblems well posed.
//!
//! The crate is `no_std` and only needs `alloc`. Solver backends, scenario
//! files, and the command line live in the companion `scvx-drive` crate.
//!
//! # Layout
//!
//! - [`model`]: vehicle parameters, both kinematic variants and the
//!   arc-length dynamics with exact Jacobians.
//! - [`transcription`]: FOH multiple-shooting discretization, propagation of
//!   the discrete model, affine variable scaling.
//! - [`program`]: solver-agnostic conic program and the solver interface.
//! - [`subproblem`]: assembly of the convex subproblem and solution extraction.
//! - [`scvx`]: the outer loop, initial guess, trust-region scheduling and time
//!   recovery.
//! - [`scenario`]: a fully resolved planning problem.

#![no_std]
#![warn(missing_debug_implementations, rust_2018_idioms)]
// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

mod math;

pub mod model;
pub mod program;
pub mod scenario;
pub mod scvx;
pub mod subproblem;
pub mod transcription;

pub use model::{ArcState, Control, CurvatureProfile, ModelVariant, VehicleParams};
pub use program::{ConicProgram, ConicSolver, SolveResult, SolveSettings, SolveStatus};
pub use scenario::Scenario;
pub use scvx::{run, ConvergedPlan, ScvxConfig, ScvxError};
