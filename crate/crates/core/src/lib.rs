//! Shape optimization of a selected Maxwell eigenvalue in 2D.
//!
//! The physical domain is the image of a fixed reference triangulation under
//! `x̂ ↦ x̂ + q(x̂)`. The mixed (Kikuchi) Maxwell eigenproblem is discretized with
//! lowest-order Nédélec and P1 Lagrange elements on the reference mesh, shape
//! derivatives come from an adjoint representation, and the displacement is
//! updated by a damped inverse BFGS method in the H¹ inner product.

// `!(x > y)` is used throughout so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod bfgs;
pub mod config;
pub mod control;
pub mod eigen;
pub mod fem;
pub mod kinematics;
pub mod mesh;
pub mod objective;
pub mod runner;
pub mod sparse;
