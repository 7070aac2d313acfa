//! Differential geometry of an implicit surface `f = 0`.
//!
//! At a point with gradient `g`, the shape operator in an orthonormal
//! tangent frame `(u, v)` is `S = [uᵀHu, uᵀHv; vᵀHu, vᵀHv] / ‖g‖`. Rotating
//! the frame by `θ` gives the off-diagonal entry
//! `S₁₂(θ) = ½(κ₂ − κ₁) sin 2(θ − θ₀)`, where `θ₀` is the angle of the `κ₁`
//! direction; it vanishes for every `θ` exactly when the point is umbilic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::linalg::{normalize, Mat2Sym, Mat3Sym, Vec3};

/// Default stencil step for [`s12_finite_difference`].
pub const DEFAULT_FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentFrame {
    pub n: Vec3,
    pub u: Vec3,
    pub v: Vec3,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvaturePair {
    pub kappa1: f64,
    pub kappa2: f64,
}

impl CurvaturePair {
    pub fn gap(&self) -> f64 {
        self.kappa2 - self.kappa1
    }

    pub fn gaussian(&self) -> f64 {
        self.kappa1 * self.kappa2
    }
}

/// Deterministic tangent pair for unit `n`: project the coordinate axis on
/// which `n` has the smallest magnitude (lowest index on ties) onto the
/// tangent plane, then complete with `v₀ = n × u₀`.
pub fn base_frame(n: Vec3) -> (Vec3, Vec3) {
    let m = n.abs();
    let axis = if m.x <= m.y && m.x <= m.z {
        0
    } else if m.y <= m.z {
        1
    } else {
        2
    };
    let a = Vec3::axis(axis);
    let u0 = (a - n * a.dot(n))
        .normalize()
        .expect("the least-aligned axis is never parallel to a unit normal");
    (u0, n.cross(u0))
}

pub fn rotate_frame(u0: Vec3, v0: Vec3, theta: f64) -> (Vec3, Vec3) {
    let (s, c) = theta.sin_cos();
    (u0 * c + v0 * s, u0 * (-s) + v0 * c)
}

pub fn tangent_frame(n: Vec3, theta: f64) -> TangentFrame {
    let (u0, v0) = base_frame(n);
    let (u, v) = rotate_frame(u0, v0, theta);
    TangentFrame { n, u, v, theta }
}

/// Gradient at `x` and the frame rotated by `theta` from the base frame.
pub fn frame_at<F: Field + ?Sized>(field: &F, x: Vec3, theta: f64) -> Result<(Vec3, TangentFrame)> {
    let g = field.gradient(x);
    let n = normalize(g)?;
    Ok((g, tangent_frame(n, theta)))
}

/// `uᵀ H v / ‖∇f‖` from a single Hessian-vector product.
pub fn s12_autodiff<F: Field + ?Sized>(field: &F, x: Vec3, theta: f64) -> Result<f64> {
    let (g, frame) = frame_at(field, x, theta)?;
    Ok(s12_autodiff_in_frame(field, x, g, frame.u, frame.v))
}

/// As [`s12_autodiff`] with the gradient and frame supplied by the caller.
pub fn s12_autodiff_in_frame<F: Field + ?Sized>(
    field: &F,
    x: Vec3,
    g: Vec3,
    u: Vec3,
    v: Vec3,
) -> f64 {
    u.dot(field.hvp(x, v)) / g.norm()
}

/// Forward mixed difference
/// `(f(x+hu+hv) − f(x+hu) − f(x+hv) + f(x)) / h²`, divided by `‖∇f(x)‖`.
/// Its error against the exact entry is `O(h)`.
pub fn s12_finite_difference<F: Field + ?Sized>(
    field: &F,
    x: Vec3,
    theta: f64,
    h: f64,
) -> Result<f64> {
    assert!(h > 0.0, "stencil step must be positive");
    let (f0, g) = field.value_and_gradient(x);
    let n = normalize(g)?;
    let frame = tangent_frame(n, theta);
    Ok(s12_fd_in_frame(field, x, f0, g, frame.u, frame.v, h))
}

/// As [`s12_finite_difference`] with `f(x)`, gradient and frame supplied.
pub fn s12_fd_in_frame<F: Field + ?Sized>(
    field: &F,
    x: Vec3,
    f0: f64,
    g: Vec3,
    u: Vec3,
    v: Vec3,
    h: f64,
) -> f64 {
    mixed_difference(field, x, f0, u, v, h) / g.norm()
}

/// The raw stencil `D⁺_uv`.
pub fn mixed_difference<F: Field + ?Sized>(
    field: &F,
    x: Vec3,
    f0: f64,
    u: Vec3,
    v: Vec3,
    h: f64,
) -> f64 {
    let fuv = field.value(x + u * h + v * h);
    let fu = field.value(x + u * h);
    let fv = field.value(x + v * h);
    (fuv - fu - fv + f0) / (h * h)
}

/// Shape operator in the base frame (`θ = 0`), from `Hu` and `Hv`.
pub fn shape_operator<F: Field + ?Sized>(field: &F, x: Vec3) -> Result<Mat2Sym> {
    let (g, frame) = frame_at(field, x, 0.0)?;
    let hu = field.hvp(x, frame.u);
    let hv = field.hvp(x, frame.v);
    let inv = 1.0 / g.norm();
    Ok(Mat2Sym::new(
        frame.u.dot(hu) * inv,
        0.5 * (frame.u.dot(hv) + frame.v.dot(hu)) * inv,
        frame.v.dot(hv) * inv,
    ))
}

pub fn principal_curvatures(s: Mat2Sym) -> CurvaturePair {
    let (kappa1, kappa2) = s.eigenvalues();
    CurvaturePair { kappa1, kappa2 }
}

/// `K = det S`.
pub fn gaussian_curvature<F: Field + ?Sized>(field: &F, x: Vec3) -> Result<f64> {
    Ok(shape_operator(field, x)?.det())
}

/// Gaussian curvature from the full Hessian without a tangent frame:
/// `K = gᵀ adj(H) g / ‖g‖⁴`.
pub fn gaussian_curvature_from_hessian(g: Vec3, h: &Mat3Sym) -> Result<f64> {
    let n2 = g.norm_squared();
    if !(n2.sqrt() > crate::linalg::EPS_NORM) {
        return Err(Error::DegenerateGradient { norm: n2.sqrt() });
    }
    Ok(h.adjugate().bilinear(g, g) / (n2 * n2))
}

/// Partial derivatives of `K = gᵀ adj(H) g / ‖g‖⁴` with respect to `g` and
/// to the six independent entries of the symmetric `H` (returned in the
/// `Mat3Sym` slots; off-diagonal slots hold `∂K/∂h_ij` for the shared
/// entry).
pub fn gaussian_curvature_partials(g: Vec3, h: &Mat3Sym) -> (f64, Vec3, Mat3Sym) {
    let n2 = g.norm_squared();
    let n4 = n2 * n2;
    let adj = h.adjugate();
    let q = adj.bilinear(g, g);
    let k = q / n4;
    let dk_dg = adj.mul_vec(g) * (2.0 / n4) - g * (4.0 * q / (n4 * n2));
    let (g1, g2, g3) = (g.x, g.y, g.z);
    let (h11, h12, h13, h22, h23, h33) = (h.m11, h.m12, h.m13, h.m22, h.m23, h.m33);
    let dq = Mat3Sym::new(
        h33 * g2 * g2 + h22 * g3 * g3 - 2.0 * h23 * g2 * g3,
        -2.0 * h12 * g3 * g3 - 2.0 * h33 * g1 * g2 + 2.0 * h23 * g1 * g3 + 2.0 * h13 * g2 * g3,
        -2.0 * h13 * g2 * g2 + 2.0 * h23 * g1 * g2 - 2.0 * h22 * g1 * g3 + 2.0 * h12 * g2 * g3,
        h33 * g1 * g1 + h11 * g3 * g3 - 2.0 * h13 * g1 * g3,
        -2.0 * h23 * g1 * g1 + 2.0 * h13 * g1 * g2 + 2.0 * h12 * g1 * g3 - 2.0 * h11 * g2 * g3,
        h22 * g1 * g1 + h11 * g2 * g2 - 2.0 * h12 * g1 * g2,
    );
    (k, dk_dg, dq.scale(1.0 / n4))
}
