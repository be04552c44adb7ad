//! Point-cloud reconstruction metrics: Chamfer distance, normal
//! consistency, and F1 at a distance threshold.
//!
//! All three reduce a [`NearestPairing`]: for every point of one cloud, its
//! exact nearest neighbor in the other. Nearest neighbors come from a k-d
//! tree above 64 points and a linear scan below; both routes are exact and
//! break distance ties toward the lower point index, so metric values do
//! not depend on the backend.

use thiserror::Error;

use crate::geom::Vec3;
use crate::sampling::PointCloud;

#[derive(Error, Debug)]
pub enum ReconError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("distance threshold must be positive, got {0}")]
    NonPositiveThreshold(f64),
}

/// Power applied to the Euclidean nearest-neighbor distance inside the
/// Chamfer sum. Squared is the default convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceExponent {
    Linear,
    #[default]
    Squared,
}

impl DistanceExponent {
    fn apply(&self, d: f64) -> f64 {
        match self {
            DistanceExponent::Linear => d,
            DistanceExponent::Squared => d * d,
        }
    }
}

/// For each point of `P` the index of and distance to its nearest point in
/// `Q`, and the reverse.
#[derive(Debug, Clone)]
pub struct NearestPairing {
    pub p_to_q: Vec<(usize, f64)>,
    pub q_to_p: Vec<(usize, f64)>,
}

impl NearestPairing {
    pub fn compute(p: &PointCloud, q: &PointCloud) -> Result<Self, ReconError> {
        if p.is_empty() || q.is_empty() {
            return Err(ReconError::EmptyCloud);
        }
        Ok(NearestPairing {
            p_to_q: nearest_all(p.points(), q.points()),
            q_to_p: nearest_all(q.points(), p.points()),
        })
    }
}

const BRUTE_FORCE_LIMIT: usize = 64;

fn nearest_all(queries: &[Vec3], targets: &[Vec3]) -> Vec<(usize, f64)> {
    if targets.len() < BRUTE_FORCE_LIMIT {
        queries
            .iter()
            .map(|&query| nearest_linear(query, targets))
            .collect()
    } else {
        let tree = KdTree::build(targets);
        queries.iter().map(|&query| tree.nearest(query)).collect()
    }
}

fn nearest_linear(query: Vec3, targets: &[Vec3]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (i, &t) in targets.iter().enumerate() {
        let d2 = query.distance_squared(t);
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    (best.0, best.1.sqrt())
}

/// Static k-d tree over a point slice. Median splits on the widest axis.
struct KdTree<'a> {
    points: &'a [Vec3],
    nodes: Vec<KdNode>,
    root: usize,
}

struct KdNode {
    axis: u8,
    split: f64,
    /// point index for leaves; children for inner nodes
    leaf: Vec<u32>,
    left: usize,
    right: usize,
}

const KD_LEAF: usize = 16;

impl<'a> KdTree<'a> {
    fn build(points: &'a [Vec3]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::new();
        let root = Self::build_rec(points, &mut order[..], &mut nodes);
        KdTree { points, nodes, root }
    }

    fn build_rec(points: &[Vec3], order: &mut [u32], nodes: &mut Vec<KdNode>) -> usize {
        if order.len() <= KD_LEAF {
            nodes.push(KdNode {
                axis: 0,
                split: 0.0,
                leaf: order.to_vec(),
                left: usize::MAX,
                right: usize::MAX,
            });
            return nodes.len() - 1;
        }
        let mut lo = points[order[0] as usize];
        let mut hi = lo;
        for &i in order.iter() {
            lo = lo.min_componentwise(points[i as usize]);
            hi = hi.max_componentwise(points[i as usize]);
        }
        let extent = hi - lo;
        let axis = if extent.x >= extent.y && extent.x >= extent.z {
            0
        } else if extent.y >= extent.z {
            1
        } else {
            2
        };
        let coord = |i: u32| -> f64 {
            let p = points[i as usize];
            match axis {
                0 => p.x,
                1 => p.y,
                _ => p.z,
            }
        };
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            coord(a).partial_cmp(&coord(b)).unwrap().then(a.cmp(&b))
        });
        let split = coord(order[mid]);
        let (left_slice, right_slice) = order.split_at_mut(mid);
        let node_idx = nodes.len();
        nodes.push(KdNode {
            axis: axis as u8,
            split,
            leaf: Vec::new(),
            left: usize::MAX,
            right: usize::MAX,
        });
        let left = Self::build_rec(points, left_slice, nodes);
        let right = Self::build_rec(points, right_slice, nodes);
        nodes[node_idx].left = left;
        nodes[node_idx].right = right;
        node_idx
    }

    fn nearest(&self, query: Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(self.root, query, &mut best);
        (best.0, best.1.sqrt())
    }

    fn search(&self, node_idx: usize, query: Vec3, best: &mut (usize, f64)) {
        let node = &self.nodes[node_idx];
        if node.left == usize::MAX {
            for &i in &node.leaf {
                let d2 = query.distance_squared(self.points[i as usize]);
                // strict < plus lower-index tiebreak keeps parity with the
                // linear scan even for duplicated points
                if d2 < best.1 || (d2 == best.1 && (i as usize) < best.0) {
                    *best = (i as usize, d2);
                }
            }
            return;
        }
        let qc = match node.axis {
            0 => query.x,
            1 => query.y,
            _ => query.z,
        };
        let delta = qc - node.split;
        let (near, far) = if delta < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.search(near, query, best);
        if delta * delta <= best.1 {
            self.search(far, query, best);
        }
    }
}

/// Chamfer distance: half the sum of the two directed mean nearest-neighbor
/// distances, each raised to `exponent`. Symmetric by construction and zero
/// for identical clouds.
pub fn chamfer(
    p: &PointCloud,
    q: &PointCloud,
    exponent: DistanceExponent,
) -> Result<f64, ReconError> {
    let pairing = NearestPairing::compute(p, q)?;
    Ok(chamfer_from_pairing(&pairing, exponent))
}

pub fn chamfer_from_pairing(pairing: &NearestPairing, exponent: DistanceExponent) -> f64 {
    let fwd: f64 = pairing.p_to_q.iter().map(|&(_, d)| exponent.apply(d)).sum();
    let bwd: f64 = pairing.q_to_p.iter().map(|&(_, d)| exponent.apply(d)).sum();
    0.5 * (fwd / pairing.p_to_q.len() as f64 + bwd / pairing.q_to_p.len() as f64)
}

/// Normal consistency: half the sum of the two directed mean dot products
/// between each point's unit normal and its nearest neighbor's. Signed dot
/// products; range [-1, 1].
pub fn normal_consistency(p: &PointCloud, q: &PointCloud) -> Result<f64, ReconError> {
    normal_consistency_impl(p, q, false)
}

/// [`normal_consistency`] with absolute dot products, for comparison against
/// pipelines that ignore normal orientation. Range [0, 1].
pub fn normal_consistency_absolute(p: &PointCloud, q: &PointCloud) -> Result<f64, ReconError> {
    normal_consistency_impl(p, q, true)
}

fn normal_consistency_impl(
    p: &PointCloud,
    q: &PointCloud,
    absolute: bool,
) -> Result<f64, ReconError> {
    let pairing = NearestPairing::compute(p, q)?;
    let dot = |a: Vec3, b: Vec3| {
        let d = a.dot(b);
        if absolute {
            d.abs()
        } else {
            d
        }
    };
    let fwd: f64 = pairing
        .p_to_q
        .iter()
        .enumerate()
        .map(|(i, &(j, _))| dot(p.normals()[i], q.normals()[j]))
        .sum();
    let bwd: f64 = pairing
        .q_to_p
        .iter()
        .enumerate()
        .map(|(i, &(j, _))| dot(q.normals()[i], p.normals()[j]))
        .sum();
    Ok(0.5 * (fwd / p.len() as f64 + bwd / q.len() as f64))
}

/// F1 at distance threshold `t`, on a 0–100 scale. Precision is the
/// percentage of `P` within `t` of `Q`; completeness the percentage of `Q`
/// within `t` of `P`; F1 their harmonic mean, 0 when both are 0.
pub fn f1_score(p: &PointCloud, q: &PointCloud, t: f64) -> Result<f64, ReconError> {
    if !(t > 0.0) {
        return Err(ReconError::NonPositiveThreshold(t));
    }
    let pairing = NearestPairing::compute(p, q)?;
    let within = |dists: &[(usize, f64)]| {
        100.0 * dists.iter().filter(|&&(_, d)| d <= t).count() as f64 / dists.len() as f64
    };
    let precision = within(&pairing.p_to_q);
    let completeness = within(&pairing.q_to_p);
    if precision + completeness == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * completeness / (precision + completeness))
}
