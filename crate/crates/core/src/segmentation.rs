//! KD-tree accelerated DBSCAN over the nonground world-frame cloud.
//!
//! The tree is a plain median-split kd-tree over point positions. DBSCAN
//! follows the classic formulation: a point is a core point when it has at
//! least `min_pts` neighbors within `eps` (counting itself), clusters are
//! maximal density-connected sets, and border points go to the first cluster
//! that claims them in ascending scan order. That tie rule plus the fixed
//! scan order makes the labeling deterministic.

use crate::geometry::PointCloud;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SegmentationError {
    #[error("cluster summary requires at least one point")]
    EmptyCluster,
}

/// DBSCAN parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct DbscanConfig {
    /// Neighborhood radius in meters.
    pub eps: f64,
    /// Minimum neighborhood size (inclusive of the query point) for a core point.
    pub min_pts: usize,
}

impl Default for DbscanConfig {
    fn default() -> Self {
        Self {
            eps: 0.5,
            min_pts: 10,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    point: usize,
    axis: usize,
    left: Option<u32>,
    right: Option<u32>,
}

/// Balanced 3-d spatial index over point positions.
#[derive(Debug, Clone)]
pub struct KdTree3 {
    nodes: Vec<Node>,
    positions: Vec<Vector3<f64>>,
    root: Option<u32>,
}

impl KdTree3 {
    pub fn build(cloud: &PointCloud) -> Self {
        Self::from_positions(cloud.points.iter().map(|p| p.position()).collect())
    }

    pub fn from_positions(positions: Vec<Vector3<f64>>) -> Self {
        let mut indices: Vec<usize> = (0..positions.len()).collect();
        let mut nodes = Vec::with_capacity(positions.len());
        let root = Self::build_rec(&positions, &mut indices, 0, &mut nodes);
        Self {
            nodes,
            positions,
            root,
        }
    }

    fn build_rec(
        positions: &[Vector3<f64>],
        indices: &mut [usize],
        depth: usize,
        nodes: &mut Vec<Node>,
    ) -> Option<u32> {
        if indices.is_empty() {
            return None;
        }
        let axis = depth % 3;
        let mid = indices.len() / 2;
        // Tie-break on the index so the tree is independent of the input
        // permutation fed to the sorter.
        indices.select_nth_unstable_by(mid, |&a, &b| {
            positions[a][axis]
                .total_cmp(&positions[b][axis])
                .then(a.cmp(&b))
        });
        let point = indices[mid];
        let slot = nodes.len() as u32;
        nodes.push(Node {
            point,
            axis,
            left: None,
            right: None,
        });
        let (left_half, rest) = indices.split_at_mut(mid);
        let right_half = &mut rest[1..];
        let left = Self::build_rec(positions, left_half, depth + 1, nodes);
        let right = Self::build_rec(positions, right_half, depth + 1, nodes);
        nodes[slot as usize].left = left;
        nodes[slot as usize].right = right;
        Some(slot)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// All point indices within `radius` (inclusive) of `query`.
    pub fn radius_query(&self, query: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.radius_query_into(query, radius, &mut out);
        out
    }

    /// Same as [`radius_query`](Self::radius_query) but reuses a scratch buffer.
    pub fn radius_query_into(&self, query: &Vector3<f64>, radius: f64, out: &mut Vec<usize>) {
        out.clear();
        if let Some(root) = self.root {
            self.query_rec(root, query, radius, radius * radius, out);
        }
    }

    fn query_rec(
        &self,
        node_idx: u32,
        query: &Vector3<f64>,
        radius: f64,
        radius_sq: f64,
        out: &mut Vec<usize>,
    ) {
        let node = self.nodes[node_idx as usize];
        let pos = &self.positions[node.point];
        if (pos - query).norm_squared() <= radius_sq {
            out.push(node.point);
        }
        let delta = query[node.axis] - pos[node.axis];
        let (near, far) = if delta < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(child) = near {
            self.query_rec(child, query, radius, radius_sq, out);
        }
        if delta.abs() <= radius {
            if let Some(child) = far {
                self.query_rec(child, query, radius, radius_sq, out);
            }
        }
    }
}

/// Builds the frame's spatial index.
pub fn build_kdtree(cloud: &PointCloud) -> KdTree3 {
    KdTree3::build(cloud)
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    fn of(points: impl Iterator<Item = Vector3<f64>>) -> Option<Self> {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        let mut seen = false;
        for p in points {
            seen = true;
            for k in 0..3 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        seen.then_some(Self { min, max })
    }
}

/// A segmented object: member indices into the frame cloud plus summary geometry.
#[derive(Debug, Clone)]
pub struct ObjectCluster {
    pub point_indices: Vec<usize>,
    pub centroid: Vector3<f64>,
    pub aabb: Aabb,
}

impl ObjectCluster {
    pub fn len(&self) -> usize {
        self.point_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_indices.is_empty()
    }
}

/// Raw DBSCAN labeling: member index lists per cluster plus the noise set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DbscanLabels {
    pub clusters: Vec<Vec<usize>>,
    pub noise: Vec<usize>,
}

/// Density-based clustering over `cloud` using `tree` for neighborhood queries.
///
/// The tree must have been built over the same cloud.
pub fn dbscan(cloud: &PointCloud, tree: &KdTree3, cfg: &DbscanConfig) -> DbscanLabels {
    let n = cloud.len();
    debug_assert_eq!(tree.len(), n, "tree must index the clustered cloud");

    const UNLABELED: usize = usize::MAX;
    const NOISE: usize = usize::MAX - 1;
    let mut labels = vec![UNLABELED; n];
    let mut neighbors = Vec::new();
    let mut cluster_count = 0usize;

    for seed in 0..n {
        if labels[seed] != UNLABELED {
            continue;
        }
        tree.radius_query_into(&cloud.points[seed].position(), cfg.eps, &mut neighbors);
        if neighbors.len() < cfg.min_pts {
            labels[seed] = NOISE;
            continue;
        }
        let cluster = cluster_count;
        cluster_count += 1;
        labels[seed] = cluster;
        let mut queue: Vec<usize> = neighbors.clone();
        let mut head = 0;
        while head < queue.len() {
            let idx = queue[head];
            head += 1;
            if labels[idx] == NOISE {
                labels[idx] = cluster; // border point, first claim wins
            }
            if labels[idx] != UNLABELED {
                continue;
            }
            labels[idx] = cluster;
            tree.radius_query_into(&cloud.points[idx].position(), cfg.eps, &mut neighbors);
            if neighbors.len() >= cfg.min_pts {
                queue.extend_from_slice(&neighbors);
            }
        }
    }

    let mut clusters = vec![Vec::new(); cluster_count];
    let mut noise = Vec::new();
    for (idx, &label) in labels.iter().enumerate() {
        if label == NOISE || label == UNLABELED {
            noise.push(idx);
        } else {
            clusters[label].push(idx);
        }
    }
    DbscanLabels { clusters, noise }
}

/// Computes centroid and bounding box over the member points.
pub fn summarize(
    indices: Vec<usize>,
    cloud: &PointCloud,
) -> Result<ObjectCluster, SegmentationError> {
    if indices.is_empty() {
        return Err(SegmentationError::EmptyCluster);
    }
    let mut sum = Vector3::zeros();
    for &i in &indices {
        sum += cloud.points[i].position();
    }
    let centroid = sum / indices.len() as f64;
    let aabb = Aabb::of(indices.iter().map(|&i| cloud.points[i].position()))
        .expect("non-empty index set");
    Ok(ObjectCluster {
        point_indices: indices,
        centroid,
        aabb,
    })
}

/// Convenience wrapper: cluster a cloud and summarize every cluster.
pub fn segment_clusters(cloud: &PointCloud, cfg: &DbscanConfig) -> Vec<ObjectCluster> {
    let tree = build_kdtree(cloud);
    let labels = dbscan(cloud, &tree, cfg);
    labels
        .clusters
        .into_iter()
        .map(|members| summarize(members, cloud).expect("dbscan clusters are non-empty"))
        .collect()
}
