//! Point clouds, the static curvature shell and per-iteration batches.
//!
//! Every random draw goes through [`stream_rng`], which keys a ChaCha8
//! generator by `(seed, stream, iteration)`. Streams are disjoint, so the
//! shell seed cannot perturb minibatch selection and vice versa.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::spatial::KdTree;

/// Largest half-extent of a normalized cloud.
pub const NORMALIZED_HALF_EXTENT: f64 = 0.9;
pub const DEFAULT_KNN: usize = 50;
/// σ for a cloud with a single point, which has no neighbors.
pub const SINGLE_POINT_SIGMA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Shell = 1,
    Minibatch = 2,
    Theta = 3,
    Freespace = 4,
    Probe = 5,
    Surface = 6,
}

pub fn stream_rng(seed: u64, stream: Stream, iteration: u64) -> ChaCha8Rng {
    assert!(iteration < 1 << 40, "iteration index out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 40) | iteration);
    rng
}

/// Maps raw coordinates to normalized ones: `(x − center) · scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub center: [f64; 3],
    pub scale: f64,
}

impl Default for Transform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        center: [0.0; 3],
        scale: 1.0,
    };

    pub fn apply(&self, x: Vec3) -> Vec3 {
        (x - Vec3::from_array(self.center)) * self.scale
    }

    pub fn invert(&self, x: Vec3) -> Vec3 {
        x / self.scale + Vec3::from_array(self.center)
    }

    /// Converts a normalized length to raw units.
    pub fn raw_length(&self, d: f64) -> f64 {
        d / self.scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    pub transform: Transform,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, normals: Option<Vec<Vec3>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(n) = &normals {
            if n.len() != points.len() {
                return Err(Error::Config(format!(
                    "{} normals for {} points",
                    n.len(),
                    points.len()
                )));
            }
        }
        Ok(Self {
            points,
            normals,
            transform: Transform::IDENTITY,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points back in raw coordinates.
    pub fn raw_points(&self) -> Vec<Vec3> {
        self.points
            .iter()
            .map(|&p| self.transform.invert(p))
            .collect()
    }
}

/// Centers the bounding box at the origin and scales uniformly so the
/// largest half-extent is 0.9. A cloud with no extent is only translated.
/// Normals are renormalized to unit length.
pub fn normalize_cloud(points: &[Vec3], normals: Option<&[Vec3]>) -> Result<PointCloud> {
    let first = *points.first().ok_or(Error::EmptyCloud)?;
    let (mut lo, mut hi) = (first, first);
    for &p in points {
        if !p.is_finite() {
            return Err(Error::Config(
                "point cloud contains non-finite coordinates".into(),
            ));
        }
        lo = lo.component_min(p);
        hi = hi.component_max(p);
    }
    let center = (lo + hi) * 0.5;
    let half = ((hi - lo) * 0.5).max_element();
    let scale = if half > 0.0 {
        NORMALIZED_HALF_EXTENT / half
    } else {
        1.0
    };
    let transform = Transform {
        center: center.to_array(),
        scale,
    };
    let normals = normals
        .map(|ns| ns.iter().map(|n| n.normalize()).collect::<Result<Vec<_>>>())
        .transpose()?;
    let mut cloud = PointCloud::new(
        points.iter().map(|&p| transform.apply(p)).collect(),
        normals,
    )?;
    cloud.transform = transform;
    Ok(cloud)
}

/// Distance from each point to its `min(k, N−1)`-th nearest neighbor.
pub fn knn_sigma(points: &[Vec3], k: usize) -> Result<Vec<f64>> {
    match points.len() {
        0 => return Err(Error::EmptyCloud),
        1 => return Ok(vec![SINGLE_POINT_SIGMA]),
        _ => {}
    }
    let k = k.min(points.len() - 1).max(1);
    let tree = KdTree::new(points);
    Ok(points
        .par_iter()
        .enumerate()
        .map(|(i, &p)| tree.knn(p, k, Some(i))[k - 1].1)
        .collect())
}

/// The static near-surface set on which curvature terms are evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct ShellSet {
    points: Vec<Vec3>,
    source_indices: Vec<usize>,
}

impl ShellSet {
    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn source_indices(&self) -> &[usize] {
        &self.source_indices
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Picks `count` sources without replacement (all of them if `count ≥ N`)
/// and offsets each by an isotropic Gaussian with deviation `σᵢ`.
pub fn build_shell(points: &[Vec3], sigmas: &[f64], count: usize, seed: u64) -> Result<ShellSet> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    assert_eq!(points.len(), sigmas.len(), "one sigma per point");
    let mut rng = stream_rng(seed, Stream::Shell, 0);
    let count = count.min(points.len());
    let mut source_indices = index::sample(&mut rng, points.len(), count).into_vec();
    source_indices.sort_unstable();
    let shell = source_indices
        .iter()
        .map(|&i| {
            let offset = Vec3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            points[i] + offset * sigmas[i]
        })
        .collect();
    Ok(ShellSet {
        points: shell,
        source_indices,
    })
}

/// `count` points uniform in `[−1, 1]³`.
pub fn sample_uniform_box(count: usize, seed: u64, iteration: u64) -> Vec<Vec3> {
    let mut rng = stream_rng(seed, Stream::Freespace, iteration);
    (0..count)
        .map(|_| {
            Vec3::new(
                rng.random_range(-1.0..=1.0),
                rng.random_range(-1.0..=1.0),
                rng.random_range(-1.0..=1.0),
            )
        })
        .collect()
}

/// `m` distinct indices from `0..n_total`, keyed by `(seed, iteration)`.
pub fn minibatch(n_total: usize, m: usize, seed: u64, iteration: u64) -> Result<Vec<usize>> {
    if m > n_total {
        return Err(Error::BatchTooLarge {
            requested: m,
            available: n_total,
        });
    }
    let mut rng = stream_rng(seed, Stream::Minibatch, iteration);
    Ok(index::sample(&mut rng, n_total, m).into_vec())
}

/// Fresh frame angles in `[0, 2π)`, one per shell point.
pub fn sample_thetas(count: usize, seed: u64, iteration: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, Stream::Theta, iteration);
    (0..count)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect()
}
