//! Finite element library for control-constrained optimal control of the
//! stationary Stokes equations.
//!
//! Two model problems are supported: distributed control (control acts as a
//! body force, homogeneous or prescribed Dirichlet velocity) and Neumann
//! boundary control (control acts as a boundary traction). Each can be
//! discretized with the nonconforming Crouzeix-Raviart/P0 pair or with the
//! symmetric interior penalty DG P1/P0 pair. The coupled state/adjoint/control
//! optimality system is solved by a primal-dual active set iteration, residual
//! a posteriori indicators drive Dörfler marking and newest vertex bisection.

// index loops mirror the local-basis formulas; negated comparisons reject NaN
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod assembly;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod mesh;
pub mod optctrl;
pub mod probes;
pub mod quadrature;
pub mod saddle;
pub mod spaces;
pub mod sparse;
pub mod verify;

pub use error::{Error, Result};

/// Point or vector in the plane.
pub type Vec2 = [f64; 2];
/// 2x2 matrix stored row-major: `m[i][j] = d v_i / d x_j` for gradients.
pub type Mat2 = [[f64; 2]; 2];
