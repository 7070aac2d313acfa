//! Analytic signed-distance oracles with closed-form derivatives.
//!
//! Sign convention: `f < 0` inside, so outward normals are `∇f` and a sphere
//! of radius `r` has both principal curvatures `+1/r`.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::linalg::{Mat3Sym, Vec3};
use crate::sampling::{stream_rng, PointCloud, Stream};

/// Distance below which a point counts as on a singular locus.
pub const SINGULAR_RADIUS: f64 = 1e-6;
/// Half-length of the sampled patch of the unbounded shapes (plane,
/// cylinder).
pub const PATCH_HALF_EXTENT: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticShape {
    /// `n·x − c` with `n` normalized at construction.
    Plane {
        n: Vec3,
        c: f64,
    },
    Sphere {
        r: f64,
    },
    /// Infinite cylinder around the z axis.
    CylinderZ {
        r: f64,
    },
    /// Around the z axis, major radius `big_r`, tube radius `r`.
    Torus {
        big_r: f64,
        r: f64,
    },
    /// Box of half-extents `half_extents + rounding` with edges rounded by
    /// `rounding`. Exact outside, a lower bound inside.
    RoundedBox {
        half_extents: Vec3,
        rounding: f64,
    },
}

/// Value, gradient and Hessian at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSample {
    pub f: f64,
    pub grad: Vec3,
    pub hessian: Mat3Sym,
}

impl AnalyticShape {
    pub fn plane(n: Vec3, c: f64) -> Result<Self> {
        Ok(AnalyticShape::Plane {
            n: n.normalize()?,
            c,
        })
    }

    pub fn sphere(r: f64) -> Result<Self> {
        positive(r, "sphere radius")?;
        Ok(AnalyticShape::Sphere { r })
    }

    pub fn cylinder(r: f64) -> Result<Self> {
        positive(r, "cylinder radius")?;
        Ok(AnalyticShape::CylinderZ { r })
    }

    pub fn torus(big_r: f64, r: f64) -> Result<Self> {
        positive(r, "tube radius")?;
        if !(big_r > r && big_r.is_finite()) {
            return Err(Error::Config("torus needs 0 < r < R".into()));
        }
        Ok(AnalyticShape::Torus { big_r, r })
    }

    pub fn rounded_box(half_extents: Vec3, rounding: f64) -> Result<Self> {
        if !(half_extents.is_finite()
            && half_extents.x >= 0.0
            && half_extents.y >= 0.0
            && half_extents.z >= 0.0)
        {
            return Err(Error::Config(
                "box half-extents must be non-negative".into(),
            ));
        }
        if !(rounding >= 0.0 && rounding.is_finite()) {
            return Err(Error::Config("rounding must be non-negative".into()));
        }
        Ok(AnalyticShape::RoundedBox {
            half_extents,
            rounding,
        })
    }

    /// Signed distance, defined everywhere including the medial locus.
    pub fn distance(&self, x: Vec3) -> f64 {
        match *self {
            AnalyticShape::Plane { n, c } => n.dot(x) - c,
            AnalyticShape::Sphere { r } => x.norm() - r,
            AnalyticShape::CylinderZ { r } => x.x.hypot(x.y) - r,
            AnalyticShape::Torus { big_r, r } => (x.x.hypot(x.y) - big_r).hypot(x.z) - r,
            AnalyticShape::RoundedBox {
                half_extents,
                rounding,
            } => {
                let q = x.abs() - half_extents;
                let p = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0));
                p.norm() + q.max_element().min(0.0) - rounding
            }
        }
    }

    /// Exact value, gradient and Hessian, or [`Error::SingularPoint`] within
    /// [`SINGULAR_RADIUS`] of the medial locus.
    pub fn oracle_eval(&self, x: Vec3) -> Result<OracleSample> {
        match *self {
            AnalyticShape::Plane { n, c } => Ok(OracleSample {
                f: n.dot(x) - c,
                grad: n,
                hessian: Mat3Sym::ZERO,
            }),
            AnalyticShape::Sphere { r } => {
                let d = x.norm();
                if d < SINGULAR_RADIUS {
                    return Err(Error::SingularPoint);
                }
                let n = x / d;
                Ok(OracleSample {
                    f: d - r,
                    grad: n,
                    hessian: Mat3Sym::identity().sub(&Mat3Sym::outer(n)).scale(1.0 / d),
                })
            }
            AnalyticShape::CylinderZ { r } => {
                let rho = x.x.hypot(x.y);
                if rho < SINGULAR_RADIUS {
                    return Err(Error::SingularPoint);
                }
                let e = Vec3::new(x.x / rho, x.y / rho, 0.0);
                Ok(OracleSample {
                    f: rho - r,
                    grad: e,
                    hessian: planar_projector().sub(&Mat3Sym::outer(e)).scale(1.0 / rho),
                })
            }
            AnalyticShape::Torus { big_r, r } => {
                let rho = x.x.hypot(x.y);
                if rho < SINGULAR_RADIUS {
                    return Err(Error::SingularPoint);
                }
                let e = Vec3::new(x.x / rho, x.y / rho, 0.0);
                let w = rho - big_r;
                let d = w.hypot(x.z);
                if d < SINGULAR_RADIUS {
                    return Err(Error::SingularPoint);
                }
                // D = ‖q‖ with q = (ρ − R, z): H_D = (J_qᵀJ_q + w∇²ρ − ∇D∇Dᵀ)/D.
                let grad = (e * w + Vec3::Z * x.z) / d;
                let jtj = Mat3Sym::outer(e).add(&Mat3Sym::outer(Vec3::Z));
                let hess_rho = planar_projector().sub(&Mat3Sym::outer(e)).scale(1.0 / rho);
                let hessian = jtj
                    .add(&hess_rho.scale(w))
                    .sub(&Mat3Sym::outer(grad))
                    .scale(1.0 / d);
                Ok(OracleSample {
                    f: d - r,
                    grad,
                    hessian,
                })
            }
            AnalyticShape::RoundedBox {
                half_extents,
                rounding,
            } => {
                let q = x.abs() - half_extents;
                let p = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0));
                let outside = p.norm();
                if outside > 0.0 {
                    let active = (0..3).filter(|&i| p[i] > 0.0).count();
                    if active > 1 && outside < SINGULAR_RADIUS {
                        return Err(Error::SingularPoint);
                    }
                    let s = Vec3::new(signum(x.x), signum(x.y), signum(x.z));
                    let grad = Vec3::new(s.x * p.x, s.y * p.y, s.z * p.z) / outside;
                    let mask = Mat3Sym::new(
                        indicator(p.x),
                        0.0,
                        0.0,
                        indicator(p.y),
                        0.0,
                        indicator(p.z),
                    );
                    Ok(OracleSample {
                        f: outside - rounding,
                        grad,
                        hessian: mask.sub(&Mat3Sym::outer(grad)).scale(1.0 / outside),
                    })
                } else {
                    // Inside the core box: distance to the nearest face.
                    let k = (0..3).fold(0, |best, i| if q[i] > q[best] { i } else { best });
                    let mut grad = Vec3::ZERO;
                    if k == 0 {
                        grad.x = signum(x.x);
                    } else if k == 1 {
                        grad.y = signum(x.y);
                    } else {
                        grad.z = signum(x.z);
                    }
                    Ok(OracleSample {
                        f: q[k] - rounding,
                        grad,
                        hessian: Mat3Sym::ZERO,
                    })
                }
            }
        }
    }

    /// `n` surface points with exact outward normals, area-uniform.
    ///
    /// The plane and cylinder are unbounded, so they are sampled over the
    /// patch where the in-plane coordinates (plane) or `z` (cylinder) lie in
    /// `±PATCH_HALF_EXTENT`. The rounded box is split into its 6 faces, 12
    /// quarter-cylinder edges and 8 sphere octants; a piece is chosen with
    /// probability proportional to its area and sampled uniformly within.
    pub fn sample_surface(&self, n: usize, seed: u64) -> PointCloud {
        let mut rng = stream_rng(seed, Stream::Surface, 0);
        let mut points = Vec::with_capacity(n);
        let mut normals = Vec::with_capacity(n);
        for _ in 0..n {
            let (p, nrm) = self.sample_one(&mut rng);
            points.push(p);
            normals.push(nrm);
        }
        PointCloud::new(points, Some(normals)).expect("sampled at least one point")
    }

    fn sample_one(&self, rng: &mut impl Rng) -> (Vec3, Vec3) {
        match *self {
            AnalyticShape::Plane { n, c } => {
                let (u, v) = crate::geometry::base_frame(n);
                let a = rng.random_range(-PATCH_HALF_EXTENT..=PATCH_HALF_EXTENT);
                let b = rng.random_range(-PATCH_HALF_EXTENT..=PATCH_HALF_EXTENT);
                (n * c + u * a + v * b, n)
            }
            AnalyticShape::Sphere { r } => {
                let d = unit_vector(rng);
                (d * r, d)
            }
            AnalyticShape::CylinderZ { r } => {
                let phi = rng.random_range(0.0..TAU);
                let z = rng.random_range(-PATCH_HALF_EXTENT..=PATCH_HALF_EXTENT);
                let e = Vec3::new(phi.cos(), phi.sin(), 0.0);
                (e * r + Vec3::Z * z, e)
            }
            AnalyticShape::Torus { big_r, r } => {
                // Area element ∝ R + r cos φ; rejection on the tube angle.
                let phi = loop {
                    let phi = rng.random_range(0.0..TAU);
                    let accept: f64 = rng.random_range(0.0..big_r + r);
                    if accept < big_r + r * phi.cos() {
                        break phi;
                    }
                };
                let theta = rng.random_range(0.0..TAU);
                let e = Vec3::new(theta.cos(), theta.sin(), 0.0);
                let nrm = e * phi.cos() + Vec3::Z * phi.sin();
                (e * big_r + nrm * r, nrm)
            }
            AnalyticShape::RoundedBox {
                half_extents,
                rounding,
            } => sample_rounded_box(half_extents, rounding, rng),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AnalyticShape::Plane { .. } => "plane",
            AnalyticShape::Sphere { .. } => "sphere",
            AnalyticShape::CylinderZ { .. } => "cylinder",
            AnalyticShape::Torus { .. } => "torus",
            AnalyticShape::RoundedBox { .. } => "roundedbox",
        }
    }
}

fn positive(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} must be positive")))
    }
}

fn signum(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn indicator(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn planar_projector() -> Mat3Sym {
    Mat3Sym::new(1.0, 0.0, 0.0, 1.0, 0.0, 0.0)
}

fn unit_vector(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

fn sample_rounded_box(b: Vec3, r: f64, rng: &mut impl Rng) -> (Vec3, Vec3) {
    // Pieces: per axis i, two faces of size 2b_j × 2b_k; per axis i, four
    // edges of length 2b_i and quarter-circumference πr/2; eight octants of
    // area πr²/2 in total.
    let mut areas = [0.0; 3 + 3 + 1];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        areas[i] = 2.0 * 4.0 * b[j] * b[k];
        areas[3 + i] = 4.0 * 2.0 * b[i] * (PI * r / 2.0);
    }
    areas[6] = 4.0 * PI * r * r;
    let total: f64 = areas.iter().sum();
    let mut pick = rng.random_range(0.0..total);
    let mut piece = areas.len() - 1;
    for (k, a) in areas.iter().enumerate() {
        if pick < *a {
            piece = k;
            break;
        }
        pick -= a;
    }
    let sign = |rng: &mut dyn rand::RngCore| if rng.random::<bool>() { 1.0 } else { -1.0 };
    let mut p = Vec3::ZERO;
    let mut n = Vec3::ZERO;
    match piece {
        i @ 0..=2 => {
            let (j, k) = ((i + 1) % 3, (i + 2) % 3);
            let s = sign(rng);
            n[i] = s;
            p[i] = s * (b[i] + r);
            p[j] = rng.random_range(-b[j]..=b[j]);
            p[k] = rng.random_range(-b[k]..=b[k]);
        }
        3..=5 => {
            let i = piece - 3;
            let (j, k) = ((i + 1) % 3, (i + 2) % 3);
            let (sj, sk) = (sign(rng), sign(rng));
            let a = rng.random_range(0.0..=PI / 2.0);
            n[j] = sj * a.cos();
            n[k] = sk * a.sin();
            p[i] = rng.random_range(-b[i]..=b[i]);
            p[j] = sj * b[j] + n[j] * r;
            p[k] = sk * b[k] + n[k] * r;
        }
        _ => {
            let d = unit_vector(rng);
            n = d;
            p = Vec3::new(signum(d.x) * b.x, signum(d.y) * b.y, signum(d.z) * b.z) + d * r;
        }
    }
    (p, n)
}

impl Field for AnalyticShape {
    fn value(&self, x: Vec3) -> f64 {
        self.distance(x)
    }

    fn value_and_gradient(&self, x: Vec3) -> (f64, Vec3) {
        self.oracle_eval(x)
            .map_or((f64::NAN, Vec3::new(f64::NAN, f64::NAN, f64::NAN)), |s| {
                (s.f, s.grad)
            })
    }

    fn hvp(&self, x: Vec3, v: Vec3) -> Vec3 {
        self.oracle_eval(x)
            .map_or(Vec3::new(f64::NAN, f64::NAN, f64::NAN), |s| {
                s.hessian.mul_vec(v)
            })
    }

    fn hessian(&self, x: Vec3) -> Mat3Sym {
        self.oracle_eval(x)
            .map_or(Mat3Sym::ZERO.scale(f64::NAN), |s| s.hessian)
    }
}

impl fmt::Display for AnalyticShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalyticShape::Plane { n, c } => write!(f, "plane:{},{},{},{}", n.x, n.y, n.z, c),
            AnalyticShape::Sphere { r } => write!(f, "sphere:{r}"),
            AnalyticShape::CylinderZ { r } => write!(f, "cylinder:{r}"),
            AnalyticShape::Torus { big_r, r } => write!(f, "torus:{big_r},{r}"),
            AnalyticShape::RoundedBox {
                half_extents: b,
                rounding,
            } => {
                write!(f, "roundedbox:{},{},{},{}", b.x, b.y, b.z, rounding)
            }
        }
    }
}

/// Parses `name` or `name:p1,p2,…`. Without parameters the catalog defaults
/// apply: `plane` z = 0, `sphere` 0.5, `cylinder` 0.5, `torus` 0.6/0.2,
/// `roundedbox` half-extents (0.5, 0.35, 0.25) with rounding 0.1.
impl FromStr for AnalyticShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let params = args
            .map(|a| {
                a.split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Config(format!("bad shape parameter {t:?}")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        let arity = |n: usize, defaults: &[f64]| -> Result<Vec<f64>> {
            match &params {
                None => Ok(defaults.to_vec()),
                Some(p) if p.len() == n => Ok(p.clone()),
                Some(p) => Err(Error::Config(format!(
                    "{name} takes {n} parameters, got {}",
                    p.len()
                ))),
            }
        };
        match name.trim().to_ascii_lowercase().as_str() {
            "plane" => {
                let p = arity(4, &[0.0, 0.0, 1.0, 0.0])?;
                AnalyticShape::plane(Vec3::new(p[0], p[1], p[2]), p[3])
            }
            "sphere" => AnalyticShape::sphere(arity(1, &[0.5])?[0]),
            "cylinder" => AnalyticShape::cylinder(arity(1, &[0.5])?[0]),
            "torus" => {
                let p = arity(2, &[0.6, 0.2])?;
                AnalyticShape::torus(p[0], p[1])
            }
            "roundedbox" => {
                let p = arity(4, &[0.5, 0.35, 0.25, 0.1])?;
                AnalyticShape::rounded_box(Vec3::new(p[0], p[1], p[2]), p[3])
            }
            other => Err(Error::Config(format!("unknown shape {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_and_plane_values() {
        let s = AnalyticShape::sphere(1.0).unwrap();
        let o = s.oracle_eval(Vec3::new(2.0, 0.0, 0.0)).unwrap();
        assert_eq!((o.f, o.grad), (1.0, Vec3::X));
        let p = AnalyticShape::plane(Vec3::Z, 0.0).unwrap();
        let o = p.oracle_eval(Vec3::new(5.0, 5.0, 0.3)).unwrap();
        assert_eq!((o.f, o.grad, o.hessian), (0.3, Vec3::Z, Mat3Sym::ZERO));
    }

    #[test]
    fn singular_points_are_reported() {
        let cases = [
            (AnalyticShape::sphere(1.0).unwrap(), Vec3::ZERO),
            (
                AnalyticShape::cylinder(1.0).unwrap(),
                Vec3::new(0.0, 0.0, 3.0),
            ),
            (
                AnalyticShape::torus(0.6, 0.2).unwrap(),
                Vec3::new(0.6, 0.0, 0.0),
            ),
            (
                AnalyticShape::torus(0.6, 0.2).unwrap(),
                Vec3::new(0.0, 0.0, 0.1),
            ),
        ];
        for (shape, x) in cases {
            assert!(
                matches!(shape.oracle_eval(x), Err(Error::SingularPoint)),
                "{shape}"
            );
        }
    }

    #[test]
    fn samples_lie_on_the_surface() {
        for name in [
            "sphere",
            "cylinder",
            "torus",
            "plane",
            "roundedbox",
            "roundedbox:0.3,0,0.2,0.05",
        ] {
            let shape: AnalyticShape = name.parse().unwrap();
            let cloud = shape.sample_surface(2000, 4);
            let normals = cloud.normals.as_ref().unwrap();
            for (p, n) in cloud.points.iter().zip(normals) {
                let o = shape.oracle_eval(*p).unwrap();
                assert!(o.f.abs() < 1e-12, "{name}: f = {}", o.f);
                assert!(
                    (o.grad - *n).norm() < 1e-9,
                    "{name}: normal mismatch at {p:?}"
                );
            }
        }
    }

    #[test]
    fn torus_samples_satisfy_the_implicit_equation() {
        let cloud = AnalyticShape::torus(0.6, 0.2)
            .unwrap()
            .sample_surface(5000, 2);
        for p in &cloud.points {
            let w = p.x.hypot(p.y) - 0.6;
            assert!((w * w + p.z * p.z - 0.04).abs() < 1e-12);
        }
    }

    #[test]
    fn parse_round_trips_through_display() {
        for name in [
            "sphere:0.25",
            "torus:0.6,0.2",
            "cylinder:0.4",
            "roundedbox:0.5,0.35,0.25,0.1",
        ] {
            let s: AnalyticShape = name.parse().unwrap();
            assert_eq!(s.to_string(), name);
            assert_eq!(s.to_string().parse::<AnalyticShape>().unwrap(), s);
        }
        assert!("teapot".parse::<AnalyticShape>().is_err());
        assert!("torus:0.2,0.6".parse::<AnalyticShape>().is_err());
        assert!("sphere:1,2".parse::<AnalyticShape>().is_err());
    }
}
