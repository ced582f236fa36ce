//! Surface normals from k-nearest-neighbor plane fits, oriented toward a
//! chosen center point.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use log::debug;
use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Default neighborhood size.
pub const DEFAULT_K: usize = 16;

const LEAF_SIZE: usize = 8;

/// Normal used when a neighborhood has no well-defined plane.
pub const FALLBACK_NORMAL: [f64; 3] = [0.0, 0.0, 1.0];

#[derive(Debug)]
enum KdNode {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Balanced k-d tree over 3-D positions with median splits on alternating
/// axes.
#[derive(Debug)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    /// Point indices, grouped so every leaf owns a contiguous range.
    order: Vec<usize>,
    nodes: Vec<KdNode>,
}

#[derive(PartialEq)]
struct Candidate {
    dist2: f64,
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
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

impl KdTree {
    pub fn build(points: &[[f64; 3]]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput(
                "k-d tree needs at least one point".into(),
            ));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        let mut tree = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        tree.build_node(0, points.len(), 0);
        Ok(tree)
    }

    fn build_node(&mut self, start: usize, end: usize, depth: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(KdNode::Leaf { start, end });
            return id;
        }
        let axis = depth % 3;
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(KdNode::Leaf { start, end });
        let left = self.build_node(start, mid, depth + 1);
        let right = self.build_node(mid, end, depth + 1);
        self.nodes[id] = KdNode::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    /// Indices of the `min(k, n)` points nearest to `query`, nearest first,
    /// equal distances ordered by index.
    pub fn knn(&self, query: [f64; 3], k: usize) -> Result<Vec<usize>> {
        if k < 1 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let k = k.min(self.points.len());
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, &query, k, &mut heap);
        let mut found = heap.into_vec();
        found.sort();
        Ok(found.into_iter().map(|c| c.index).collect())
    }

    fn search(&self, node: usize, q: &[f64; 3], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = Candidate {
                        dist2: dist2(&self.points[i], q),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("k >= 1") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            KdNode::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, k, heap);
                // Points equal to the split value can sit on either side, so
                // only prune when the slab is strictly farther than the worst.
                let worst = heap.peek().map_or(f64::INFINITY, |c| c.dist2);
                if heap.len() < k || diff * diff <= worst {
                    self.search(far, q, k, heap);
                }
            }
        }
    }
}

/// Unit normal of the total-least-squares plane through `positions`: the
/// eigenvector of the position covariance with the smallest eigenvalue.
/// The sign is arbitrary.
pub fn fit_plane_normal(positions: &[[f64; 3]]) -> Result<[f64; 3]> {
    if positions.len() < 3 {
        return Err(Error::DegenerateNeighborhood(format!(
            "{} points cannot define a plane",
            positions.len()
        )));
    }
    let n = positions.len() as f64;
    let mut centroid = Vector3::zeros();
    for p in positions {
        centroid += Vector3::new(p[0], p[1], p[2]);
    }
    centroid /= n;
    let mut cov = Matrix3::zeros();
    for p in positions {
        let d = Vector3::new(p[0], p[1], p[2]) - centroid;
        cov += d * d.transpose();
    }
    cov /= n;

    let eigen = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eigen.eigenvalues[a].total_cmp(&eigen.eigenvalues[b]));
    let (smallest, middle, largest) = (
        eigen.eigenvalues[order[0]],
        eigen.eigenvalues[order[1]],
        eigen.eigenvalues[order[2]],
    );
    if largest <= 0.0 || middle.max(smallest) < 1e-12 * largest {
        return Err(Error::DegenerateNeighborhood(
            "neighborhood is collinear or coincident".into(),
        ));
    }
    let v = eigen.eigenvectors.column(order[0]).normalize();
    Ok([v[0], v[1], v[2]])
}

/// Flips `normal` so it points toward `center` from `point`. A normal exactly
/// perpendicular to the direction is returned unchanged.
pub fn orient_normal(normal: [f64; 3], point: [f64; 3], center: [f64; 3]) -> [f64; 3] {
    let dot = normal[0] * (center[0] - point[0])
        + normal[1] * (center[1] - point[1])
        + normal[2] * (center[2] - point[2]);
    if dot >= 0.0 {
        normal
    } else {
        [-normal[0], -normal[1], -normal[2]]
    }
}

/// Oriented normals for a whole cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEstimate {
    pub normals: Vec<[f64; 3]>,
    /// Points whose neighborhood was degenerate and got [`FALLBACK_NORMAL`].
    pub fallbacks: usize,
}

/// One oriented unit normal per point from its `k` nearest neighbors
/// (the point itself included).
pub fn estimate_normals(
    positions: &[[f64; 3]],
    k: usize,
    center: [f64; 3],
) -> Result<NormalEstimate> {
    if positions.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "normal estimation needs at least 3 points, got {}",
            positions.len()
        )));
    }
    if k < 3 {
        return Err(Error::InvalidArgument(format!(
            "k must be at least 3, got {k}"
        )));
    }
    let tree = KdTree::build(positions)?;
    let results: Vec<Result<([f64; 3], bool)>> = positions
        .par_iter()
        .map(|p| {
            let neighbors = tree.knn(*p, k)?;
            let local: Vec<[f64; 3]> = neighbors.iter().map(|&i| positions[i]).collect();
            match fit_plane_normal(&local) {
                Ok(n) => Ok((orient_normal(n, *p, center), false)),
                Err(Error::DegenerateNeighborhood(_)) => {
                    Ok((orient_normal(FALLBACK_NORMAL, *p, center), true))
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut normals = Vec::with_capacity(positions.len());
    let mut fallbacks = 0;
    for r in results {
        let (n, fell_back) = r?;
        fallbacks += usize::from(fell_back);
        normals.push(n);
    }
    if fallbacks > 0 {
        debug!(
            "{fallbacks} of {} points used the fallback normal",
            positions.len()
        );
    }
    Ok(NormalEstimate { normals, fallbacks })
}
