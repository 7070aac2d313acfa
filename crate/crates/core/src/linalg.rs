//! Fixed-size 3-vectors and small symmetric matrices.

use std::ops::{Add, AddAssign, Div, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gradients with norm at or below this are treated as vanishing.
pub const EPS_NORM: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };
    pub const X: Vec3 = Vec3 {
        x: 1.0,
        y: 0.0,
        z: 0.0,
    };
    pub const Y: Vec3 = Vec3 {
        x: 0.0,
        y: 1.0,
        z: 0.0,
    };
    pub const Z: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 1.0,
    };

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    #[inline]
    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Standard basis vector `e_i`.
    #[inline]
    pub fn axis(i: usize) -> Self {
        match i {
            0 => Self::X,
            1 => Self::Y,
            2 => Self::Z,
            _ => panic!("axis index {i} out of range"),
        }
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        dot(self, o)
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn normalize(self) -> Result<Vec3> {
        normalize(self)
    }

    #[inline]
    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    #[inline]
    pub fn component_min(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    #[inline]
    pub fn component_max(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    #[inline]
    pub fn abs(self) -> Vec3 {
        Vec3::new(self.x.abs(), self.y.abs(), self.z.abs())
    }

    #[inline]
    pub fn max_element(self) -> f64 {
        self.x.max(self.y).max(self.z)
    }
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a.x * b.x + a.y * b.y + a.z * b.z
}

/// Unit vector along `a`; fails with [`Error::DegenerateGradient`] when
/// `‖a‖ ≤ EPS_NORM`.
pub fn normalize(a: Vec3) -> Result<Vec3> {
    let n = a.norm();
    if !(n > EPS_NORM && n.is_finite()) {
        return Err(Error::DegenerateGradient { norm: n });
    }
    Ok(a / n)
}

impl Index<usize> for Vec3 {
    type Output = f64;
    #[inline]
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl IndexMut<usize> for Vec3 {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        match i {
            0 => &mut self.x,
            1 => &mut self.y,
            2 => &mut self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    #[inline]
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    #[inline]
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Symmetric 2×2 matrix, stored as its upper triangle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Mat2Sym {
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
}

impl Mat2Sym {
    pub const fn new(a11: f64, a12: f64, a22: f64) -> Self {
        Self { a11, a12, a22 }
    }

    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a12
    }

    pub fn trace(&self) -> f64 {
        self.a11 + self.a22
    }

    /// Eigenvalues in ascending order (closed form).
    pub fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * (self.a11 + self.a22);
        let half_diff = 0.5 * (self.a11 - self.a22);
        let radius = half_diff.hypot(self.a12);
        (mean - radius, mean + radius)
    }
}

/// Symmetric 3×3 matrix, stored as its six upper-triangle entries.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Mat3Sym {
    pub m11: f64,
    pub m12: f64,
    pub m13: f64,
    pub m22: f64,
    pub m23: f64,
    pub m33: f64,
}

impl Mat3Sym {
    pub const ZERO: Mat3Sym = Mat3Sym {
        m11: 0.0,
        m12: 0.0,
        m13: 0.0,
        m22: 0.0,
        m23: 0.0,
        m33: 0.0,
    };

    pub const fn new(m11: f64, m12: f64, m13: f64, m22: f64, m23: f64, m33: f64) -> Self {
        Self {
            m11,
            m12,
            m13,
            m22,
            m23,
            m33,
        }
    }

    pub fn identity() -> Self {
        Self::new(1.0, 0.0, 0.0, 1.0, 0.0, 1.0)
    }

    /// Symmetric part of the matrix whose columns are `c0, c1, c2`.
    pub fn from_columns_symmetrized(c0: Vec3, c1: Vec3, c2: Vec3) -> Self {
        Self::new(
            c0.x,
            0.5 * (c1.x + c0.y),
            0.5 * (c2.x + c0.z),
            c1.y,
            0.5 * (c2.y + c1.z),
            c2.z,
        )
    }

    /// `a aᵀ`.
    pub fn outer(a: Vec3) -> Self {
        Self::new(
            a.x * a.x,
            a.x * a.y,
            a.x * a.z,
            a.y * a.y,
            a.y * a.z,
            a.z * a.z,
        )
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        match (i, j) {
            (0, 0) => self.m11,
            (0, 1) => self.m12,
            (0, 2) => self.m13,
            (1, 1) => self.m22,
            (1, 2) => self.m23,
            (2, 2) => self.m33,
            _ => panic!("Mat3Sym index ({i},{j}) out of range"),
        }
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        Vec3::new(
            self.m11 * v.x + self.m12 * v.y + self.m13 * v.z,
            self.m12 * v.x + self.m22 * v.y + self.m23 * v.z,
            self.m13 * v.x + self.m23 * v.y + self.m33 * v.z,
        )
    }

    /// `uᵀ M v`.
    pub fn bilinear(&self, u: Vec3, v: Vec3) -> f64 {
        u.dot(self.mul_vec(v))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(
            self.m11 * s,
            self.m12 * s,
            self.m13 * s,
            self.m22 * s,
            self.m23 * s,
            self.m33 * s,
        )
    }

    pub fn add(&self, o: &Mat3Sym) -> Self {
        Self::new(
            self.m11 + o.m11,
            self.m12 + o.m12,
            self.m13 + o.m13,
            self.m22 + o.m22,
            self.m23 + o.m23,
            self.m33 + o.m33,
        )
    }

    pub fn sub(&self, o: &Mat3Sym) -> Self {
        Self::new(
            self.m11 - o.m11,
            self.m12 - o.m12,
            self.m13 - o.m13,
            self.m22 - o.m22,
            self.m23 - o.m23,
            self.m33 - o.m33,
        )
    }

    pub fn max_abs(&self) -> f64 {
        [self.m11, self.m12, self.m13, self.m22, self.m23, self.m33]
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Adjugate (transpose of the cofactor matrix; symmetric here).
    pub fn adjugate(&self) -> Self {
        let (h11, h12, h13, h22, h23, h33) =
            (self.m11, self.m12, self.m13, self.m22, self.m23, self.m33);
        Self::new(
            h22 * h33 - h23 * h23,
            h13 * h23 - h12 * h33,
            h12 * h23 - h13 * h22,
            h11 * h33 - h13 * h13,
            h12 * h13 - h11 * h23,
            h11 * h22 - h12 * h12,
        )
    }

    pub fn det(&self) -> f64 {
        self.m11 * (self.m22 * self.m33 - self.m23 * self.m23)
            - self.m12 * (self.m12 * self.m33 - self.m23 * self.m13)
            + self.m13 * (self.m12 * self.m23 - self.m22 * self.m13)
    }
}
