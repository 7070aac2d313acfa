//! Scalar fields `f: ℝ³ → ℝ` with first and second derivatives.

use rayon::prelude::*;

use crate::linalg::{Mat3Sym, Vec3};

/// A twice-differentiable scalar field.
///
/// `hvp` must return `H_f(x)·v` without the caller ever needing the full
/// Hessian; [`Field::hessian`] is assembled from three such products.
pub trait Field: Sync {
    fn value(&self, x: Vec3) -> f64;

    fn value_and_gradient(&self, x: Vec3) -> (f64, Vec3);

    fn hvp(&self, x: Vec3, v: Vec3) -> Vec3;

    fn gradient(&self, x: Vec3) -> Vec3 {
        self.value_and_gradient(x).1
    }

    /// Hessian from `H e₁, H e₂, H e₃`, symmetrized by averaging transposed
    /// entries.
    fn hessian(&self, x: Vec3) -> Mat3Sym {
        let c0 = self.hvp(x, Vec3::X);
        let c1 = self.hvp(x, Vec3::Y);
        let c2 = self.hvp(x, Vec3::Z);
        Mat3Sym::from_columns_symmetrized(c0, c1, c2)
    }

    fn values(&self, xs: &[Vec3]) -> Vec<f64> {
        xs.par_iter().map(|&x| self.value(x)).collect()
    }

    fn values_and_gradients(&self, xs: &[Vec3]) -> Vec<(f64, Vec3)> {
        xs.par_iter().map(|&x| self.value_and_gradient(x)).collect()
    }
}

impl<F: Field + ?Sized> Field for &F {
    fn value(&self, x: Vec3) -> f64 {
        (**self).value(x)
    }
    fn value_and_gradient(&self, x: Vec3) -> (f64, Vec3) {
        (**self).value_and_gradient(x)
    }
    fn hvp(&self, x: Vec3, v: Vec3) -> Vec3 {
        (**self).hvp(x, v)
    }
    fn values(&self, xs: &[Vec3]) -> Vec<f64> {
        (**self).values(xs)
    }
    fn values_and_gradients(&self, xs: &[Vec3]) -> Vec<(f64, Vec3)> {
        (**self).values_and_gradients(xs)
    }
}

/// `f(x) = ½ xᵀAx + bᵀx + c`. Its Taylor expansion terminates at second
/// order, which makes it the exact harness for stencil and HVP checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticField {
    pub a: Mat3Sym,
    pub b: Vec3,
    pub c: f64,
}

impl QuadraticField {
    pub fn new(a: Mat3Sym, b: Vec3, c: f64) -> Self {
        Self { a, b, c }
    }

    /// `f = xy`.
    pub fn xy() -> Self {
        Self::new(Mat3Sym::new(0.0, 1.0, 0.0, 0.0, 0.0, 0.0), Vec3::ZERO, 0.0)
    }

    /// An affine field `bᵀx + c` (zero Hessian).
    pub fn affine(b: Vec3, c: f64) -> Self {
        Self::new(Mat3Sym::ZERO, b, c)
    }
}

impl Field for QuadraticField {
    fn value(&self, x: Vec3) -> f64 {
        0.5 * self.a.bilinear(x, x) + self.b.dot(x) + self.c
    }

    fn value_and_gradient(&self, x: Vec3) -> (f64, Vec3) {
        (self.value(x), self.a.mul_vec(x) + self.b)
    }

    fn hvp(&self, _x: Vec3, v: Vec3) -> Vec3 {
        self.a.mul_vec(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_hvp_is_av() {
        let q = QuadraticField::new(
            Mat3Sym::new(2.0, 0.5, -1.0, 3.0, 0.25, -4.0),
            Vec3::new(1.0, 2.0, 3.0),
            0.5,
        );
        let v = Vec3::new(0.3, -0.2, 0.9);
        assert_eq!(q.hvp(Vec3::new(5.0, 1.0, 2.0), v), q.a.mul_vec(v));
        assert_eq!(q.hessian(Vec3::ZERO), q.a);
    }

    #[test]
    fn xy_hessian_has_single_offdiagonal() {
        let h = QuadraticField::xy().hessian(Vec3::new(0.2, 0.3, 0.4));
        assert_eq!(h, Mat3Sym::new(0.0, 1.0, 0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn affine_hessian_vanishes() {
        let f = QuadraticField::affine(Vec3::new(1.0, -2.0, 0.5), 3.0);
        assert_eq!(f.hessian(Vec3::new(1.0, 1.0, 1.0)), Mat3Sym::ZERO);
    }
}
