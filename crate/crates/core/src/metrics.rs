//! Reconstruction quality metrics.
//!
//! All distances are Euclidean nearest-neighbor distances from a kd-tree,
//! reduced in input order so results are reproducible and match a brute
//! force scan bit for bit.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::meshing::TriangleMesh;
use crate::sampling::{stream_rng, Stream};
use crate::spatial::KdTree;

/// F1 distance threshold in raw units.
pub const DEFAULT_F1_TAU: f64 = 5e-3;
/// Points sampled from each surface for mesh-level metrics.
pub const DEFAULT_EVAL_SAMPLES: usize = 100_000;

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn nonempty(a: &[Vec3]) -> Result<()> {
    if a.is_empty() {
        Err(Error::EmptySet)
    } else {
        Ok(())
    }
}

/// `½ (mean_a d(a, B) + mean_b d(b, A))`.
pub fn chamfer_l1(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    nonempty(a)?;
    nonempty(b)?;
    let ab = KdTree::new(b).nearest_distances(a);
    let ba = KdTree::new(a).nearest_distances(b);
    Ok(0.5 * (mean(&ab) + mean(&ba)))
}

/// Harmonic mean of precision (`pred` within `tau` of `gt`) and recall
/// (`gt` within `tau` of `pred`); 0 when both vanish.
pub fn f1_score(pred: &[Vec3], gt: &[Vec3], tau: f64) -> Result<f64> {
    nonempty(pred)?;
    nonempty(gt)?;
    if !(tau > 0.0) {
        return Err(Error::Config("F1 threshold must be positive".into()));
    }
    let within = |d: Vec<f64>| d.iter().filter(|&&v| v <= tau).count() as f64 / d.len() as f64;
    let precision = within(KdTree::new(gt).nearest_distances(pred));
    let recall = within(KdTree::new(pred).nearest_distances(gt));
    if precision + recall == 0.0 {
        Ok(0.0)
    } else {
        Ok(2.0 * precision * recall / (precision + recall))
    }
}

/// Mean `|cos|` between each point's normal and the normal of its nearest
/// neighbor in the other set, averaged over both directions.
pub fn normal_consistency(
    a: &[Vec3],
    a_normals: Option<&[Vec3]>,
    b: &[Vec3],
    b_normals: Option<&[Vec3]>,
) -> Result<f64> {
    nonempty(a)?;
    nonempty(b)?;
    let (an, bn) = a_normals.zip(b_normals).ok_or(Error::MissingNormals)?;
    if an.len() != a.len() || bn.len() != b.len() {
        return Err(Error::MissingNormals);
    }
    let one_way = |p: &[Vec3], pn: &[Vec3], q: &[Vec3], qn: &[Vec3]| {
        let tree = KdTree::new(q);
        let cos: Vec<f64> = p
            .par_iter()
            .zip(pn)
            .map(|(&x, &n)| {
                let (j, _) = tree.nearest(x).unwrap();
                n.dot(qn[j]).abs()
            })
            .collect();
        mean(&cos)
    };
    Ok(0.5 * (one_way(a, an, b, bn) + one_way(b, bn, a, an)))
}

/// Writes each vertex's distance to the nearest `gt` point into the scalar
/// channel and returns the largest such distance.
pub fn hausdorff_map(mesh: &TriangleMesh, gt: &[Vec3]) -> Result<(TriangleMesh, f64)> {
    nonempty(&mesh.vertices)?;
    nonempty(gt)?;
    let d = KdTree::new(gt).nearest_distances(&mesh.vertices);
    let max = d.iter().copied().fold(0.0, f64::max);
    let mut out = mesh.clone();
    out.scalars = Some(d);
    Ok((out, max))
}

/// Symmetric Hausdorff distance between two point sets.
pub fn hausdorff(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    nonempty(a)?;
    nonempty(b)?;
    let ab = KdTree::new(b).nearest_distances(a);
    let ba = KdTree::new(a).nearest_distances(b);
    Ok(ab.iter().chain(&ba).copied().fold(0.0, f64::max))
}

/// `count` area-uniform points on the mesh with their face normals.
pub fn sample_mesh(mesh: &TriangleMesh, count: usize, seed: u64) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.face_cross(t).norm();
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::EmptySet);
    }
    let mut rng = stream_rng(seed, Stream::Surface, 1);
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    for _ in 0..count {
        let pick = rng.random_range(0.0..total);
        let t = cumulative
            .partition_point(|&c| c <= pick)
            .min(cumulative.len() - 1);
        let [a, b, c] = mesh.triangles[t].map(|i| mesh.vertices[i]);
        let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        points.push(a + (b - a) * u + (c - a) * v);
        let n = mesh.face_cross(t);
        normals.push(n / n.norm());
    }
    Ok((points, normals))
}

/// Metric record in reporting units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub nc_x100: Option<f64>,
    pub cd_x1000: f64,
    pub f1_x100: f64,
    pub hausdorff_raw: f64,
}

impl MetricsRecord {
    pub const CSV_HEADER: &'static str = "nc_x100,cd_x1000,f1_x100,hausdorff_raw";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.nc_x100.map_or(String::new(), |v| v.to_string()),
            self.cd_x1000,
            self.f1_x100,
            self.hausdorff_raw
        )
    }
}

/// CD, F1 at `tau`, Hausdorff, and NC when both sides carry normals.
pub fn evaluate(
    pred: &[Vec3],
    pred_normals: Option<&[Vec3]>,
    gt: &[Vec3],
    gt_normals: Option<&[Vec3]>,
    tau: f64,
) -> Result<MetricsRecord> {
    let nc = match (pred_normals, gt_normals) {
        (Some(_), Some(_)) => Some(100.0 * normal_consistency(pred, pred_normals, gt, gt_normals)?),
        _ => None,
    };
    Ok(MetricsRecord {
        nc_x100: nc,
        cd_x1000: 1000.0 * chamfer_l1(pred, gt)?,
        f1_x100: 100.0 * f1_score(pred, gt, tau)?,
        hausdorff_raw: hausdorff(pred, gt)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chamfer_examples() {
        let a = [Vec3::ZERO];
        let b = [Vec3::new(0.001, 0.0, 0.0)];
        assert_eq!(chamfer_l1(&a, &b).unwrap(), 0.001);
        assert_eq!(chamfer_l1(&a, &a).unwrap(), 0.0);
        assert!(matches!(chamfer_l1(&[], &a), Err(Error::EmptySet)));
    }

    #[test]
    fn f1_examples() {
        let gt = [Vec3::ZERO, Vec3::X];
        assert_eq!(f1_score(&gt, &gt, 1e-3).unwrap(), 1.0);
        let far = [Vec3::new(5.0, 0.0, 0.0)];
        assert_eq!(f1_score(&far, &gt, 1e-3).unwrap(), 0.0);
        let pred = [Vec3::ZERO, Vec3::X, Vec3::Y * 3.0, Vec3::Z * 3.0];
        assert!((f1_score(&pred, &gt, 1e-3).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn nc_examples() {
        let p = [Vec3::ZERO, Vec3::X];
        let up = [Vec3::Z, Vec3::Z];
        let down = [-Vec3::Z, -Vec3::Z];
        let side = [Vec3::X, Vec3::X];
        assert_eq!(
            normal_consistency(&p, Some(&up), &p, Some(&up)).unwrap(),
            1.0
        );
        assert_eq!(
            normal_consistency(&p, Some(&up), &p, Some(&down)).unwrap(),
            1.0
        );
        assert_eq!(
            normal_consistency(&p, Some(&up), &p, Some(&side)).unwrap(),
            0.0
        );
        assert!(matches!(
            normal_consistency(&p, None, &p, Some(&up)),
            Err(Error::MissingNormals)
        ));
    }

    #[test]
    fn hausdorff_map_single_point() {
        let mesh = TriangleMesh {
            vertices: vec![Vec3::ZERO, Vec3::X, Vec3::Y],
            triangles: vec![[0, 1, 2]],
            scalars: None,
        };
        let (m, max) = hausdorff_map(&mesh, &[Vec3::Z]).unwrap();
        let s = m.scalars.unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[0], 1.0);
        assert_eq!(s[1], 2f64.sqrt());
        assert_eq!(max, 2f64.sqrt());
    }

    #[test]
    fn mesh_samples_lie_on_the_triangle() {
        let mesh = TriangleMesh {
            vertices: vec![Vec3::ZERO, Vec3::X, Vec3::Y],
            triangles: vec![[0, 1, 2]],
            scalars: None,
        };
        let (pts, ns) = sample_mesh(&mesh, 1000, 1).unwrap();
        for (p, n) in pts.iter().zip(&ns) {
            assert_eq!(p.z, 0.0);
            assert!(p.x >= 0.0 && p.y >= 0.0 && p.x + p.y <= 1.0 + 1e-15);
            assert_eq!(*n, Vec3::Z);
        }
    }
}
