//! Neural signed-distance fields regularized toward developable surfaces.
//!
//! A sinusoidal MLP is fit to an unoriented point cloud. Besides the usual
//! surface, free-space and eikonal terms, a curvature term on a static shell
//! of near-surface points penalizes the off-diagonal entry `S₁₂` of the
//! shape operator in a randomly rotated tangent frame, which on average is
//! proportional to the principal-curvature gap `|κ₂ − κ₁|`. `S₁₂` is
//! computed either from a four-point finite-difference stencil or from one
//! Hessian-vector product; a full-Hessian Gaussian-curvature penalty is
//! included for comparison.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod field;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod losses;
pub mod meshing;
pub mod metrics;
pub mod net;
pub mod sampling;
pub mod shapes;
pub mod spatial;
pub mod training;

pub use error::{Error, Result};
pub use field::Field;
pub use linalg::{Mat2Sym, Mat3Sym, Vec3};
