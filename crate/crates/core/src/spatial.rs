//! Exact nearest-neighbor queries over a static point set.
//!
//! A balanced kd-tree stored implicitly in a permutation of the point
//! indices: the node for a range `[lo, hi)` sits at its midpoint, splits on
//! the axis of widest extent, and ranges of at most `LEAF` points are
//! scanned linearly. Distances are computed as `(q - p).norm()`, the same
//! expression as [`Vec3::distance`], so results agree bitwise with a brute
//! force scan. Equal distances resolve to the lowest point index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::linalg::Vec3;

const LEAF: usize = 8;

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    perm: Vec<u32>,
    axes: Vec<u8>,
}

/// Heap entry ordered by `(d², index)`, largest on top.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then(self.index.cmp(&other.index))
    }
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        assert!(
            points.len() < u32::MAX as usize,
            "too many points for the index type"
        );
        let mut perm: Vec<u32> = (0..points.len() as u32).collect();
        let mut axes = vec![0u8; points.len()];
        build(points, &mut perm, &mut axes);
        Self {
            points: points.to_vec(),
            perm,
            axes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Index of and distance to the closest point, `None` for an empty tree.
    pub fn nearest(&self, q: Vec3) -> Option<(usize, f64)> {
        let mut best = Candidate {
            d2: f64::INFINITY,
            index: usize::MAX,
        };
        self.nearest_in(q, 0, self.points.len(), &mut best);
        (best.index != usize::MAX).then(|| (best.index, best.d2.sqrt()))
    }

    /// The `k` closest points in ascending order of distance, skipping the
    /// point with index `exclude` (not every point at the same location).
    pub fn knn(&self, q: Vec3, k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_in(q, k, exclude, 0, self.points.len(), &mut heap);
        heap.into_sorted_vec()
            .into_iter()
            .map(|c| (c.index, c.d2.sqrt()))
            .collect()
    }

    /// Distance from each query to its nearest point, in query order.
    pub fn nearest_distances(&self, queries: &[Vec3]) -> Vec<f64> {
        queries
            .par_iter()
            .map(|&q| self.nearest(q).map_or(f64::INFINITY, |n| n.1))
            .collect()
    }

    fn nearest_in(&self, q: Vec3, lo: usize, hi: usize, best: &mut Candidate) {
        if hi - lo <= LEAF {
            for &i in &self.perm[lo..hi] {
                let c = Candidate {
                    d2: (q - self.points[i as usize]).norm_squared(),
                    index: i as usize,
                };
                if c < *best {
                    *best = c;
                }
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let i = self.perm[mid] as usize;
        let axis = self.axes[mid] as usize;
        let c = Candidate {
            d2: (q - self.points[i]).norm_squared(),
            index: i,
        };
        if c < *best {
            *best = c;
        }
        let d = q[axis] - self.points[i][axis];
        let (near, far) = if d < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_in(q, near.0, near.1, best);
        if d * d <= best.d2 {
            self.nearest_in(q, far.0, far.1, best);
        }
    }

    fn knn_in(
        &self,
        q: Vec3,
        k: usize,
        exclude: Option<usize>,
        lo: usize,
        hi: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        let offer = |i: usize, heap: &mut BinaryHeap<Candidate>| {
            if Some(i) == exclude {
                return;
            }
            let c = Candidate {
                d2: (q - self.points[i]).norm_squared(),
                index: i,
            };
            if heap.len() < k {
                heap.push(c);
            } else if c < *heap.peek().unwrap() {
                heap.pop();
                heap.push(c);
            }
        };
        if hi - lo <= LEAF {
            for &i in &self.perm[lo..hi] {
                offer(i as usize, heap);
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let i = self.perm[mid] as usize;
        let axis = self.axes[mid] as usize;
        offer(i, heap);
        let d = q[axis] - self.points[i][axis];
        let (near, far) = if d < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.knn_in(q, k, exclude, near.0, near.1, heap);
        let bound = if heap.len() < k {
            f64::INFINITY
        } else {
            heap.peek().unwrap().d2
        };
        if d * d <= bound {
            self.knn_in(q, k, exclude, far.0, far.1, heap);
        }
    }
}

fn build(points: &[Vec3], perm: &mut [u32], axes: &mut [u8]) {
    let n = perm.len();
    if n <= LEAF {
        return;
    }
    let mut lo = points[perm[0] as usize];
    let mut hi = lo;
    for &i in perm.iter() {
        lo = lo.component_min(points[i as usize]);
        hi = hi.component_max(points[i as usize]);
    }
    let ext = hi - lo;
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = n / 2;
    perm.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis]
            .total_cmp(&points[b as usize][axis])
            .then(a.cmp(&b))
    });
    axes[mid] = axis as u8;
    let (left, rest) = perm.split_at_mut(mid);
    let (left_axes, rest_axes) = axes.split_at_mut(mid);
    build(points, left, left_axes);
    build(points, &mut rest[1..], &mut rest_axes[1..]);
}
