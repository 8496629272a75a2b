//! Point-cloud conditioning: range/density filtering, RANSAC ground-plane
//! removal, and the sensor-to-world transform.
//!
//! Ground removal runs in the sensor frame, where a near-horizontal plane
//! prior holds; the world transform comes after, which is equivalent under
//! rigid motion. RANSAC is seeded, so a fixed config always visits the same
//! sample sequence.

use crate::geometry::{
    pose_to_transform, transform_cloud, Frame, Plane, Point3, PointCloud, Pose6D,
};
use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("ground removal needs at least 3 points, got {got}")]
    DegenerateInput { got: usize },
}

/// Range and voxel-density filter parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub max_range: f64,
    pub min_range: f64,
    /// Voxel edge length in meters; 0 disables downsampling.
    pub voxel_leaf: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            max_range: 50.0,
            min_range: 1.5,
            voxel_leaf: 0.1,
        }
    }
}

/// RANSAC plane-fit parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub distance_threshold: f64,
    pub max_iterations: usize,
    /// Below this inlier fraction the frame is declared ground-free.
    pub min_inlier_fraction: f64,
    pub rng_seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            distance_threshold: 0.15,
            max_iterations: 200,
            min_inlier_fraction: 0.2,
            rng_seed: 0,
        }
    }
}

/// Outcome of ground removal. `plane` is `None` when no plane reached the
/// inlier threshold; the cloud then passes through unmodified.
#[derive(Debug, Clone)]
pub struct GroundSegmentation {
    pub nonground: PointCloud,
    /// Indices (into the input cloud) of the removed ground inliers.
    pub ground_indices: Vec<usize>,
    pub plane: Option<Plane>,
}

/// Drops points outside [min_range, max_range] and, when `voxel_leaf > 0`,
/// keeps one centroid per occupied voxel. Output order is deterministic:
/// range-filtered points keep input order, voxelized output is sorted by
/// voxel index.
pub fn filter_cloud(cloud: &PointCloud, cfg: &FilterConfig) -> PointCloud {
    let in_range: Vec<&Point3> = cloud
        .points
        .iter()
        .filter(|p| {
            let r = p.position().norm();
            r >= cfg.min_range && r <= cfg.max_range
        })
        .collect();

    if cfg.voxel_leaf <= 0.0 {
        return PointCloud::new(
            in_range.into_iter().copied().collect(),
            cloud.frame,
            cloud.timestamp,
        );
    }

    let leaf = cfg.voxel_leaf;
    // Per-voxel accumulation: position sum, intensity sum, count.
    type VoxelSum = (Vector3<f64>, f64, usize);
    let mut voxels: std::collections::HashMap<(i64, i64, i64), VoxelSum> =
        std::collections::HashMap::new();
    for p in in_range {
        let key = (
            (p.x / leaf).floor() as i64,
            (p.y / leaf).floor() as i64,
            (p.z / leaf).floor() as i64,
        );
        let entry = voxels.entry(key).or_insert((Vector3::zeros(), 0.0, 0));
        entry.0 += p.position();
        entry.1 += p.intensity;
        entry.2 += 1;
    }
    let mut keys: Vec<(i64, i64, i64)> = voxels.keys().copied().collect();
    keys.sort_unstable();
    let points = keys
        .into_iter()
        .map(|key| {
            let (sum, intensity, count) = voxels[&key];
            let c = sum / count as f64;
            Point3::new(c.x, c.y, c.z, intensity / count as f64)
        })
        .collect();
    PointCloud::new(points, cloud.frame, cloud.timestamp)
}

fn count_inliers(cloud: &PointCloud, plane: &Plane, threshold: f64) -> usize {
    cloud
        .points
        .iter()
        .filter(|p| plane.signed_distance(p).abs() <= threshold)
        .count()
}

fn inlier_indices(cloud: &PointCloud, plane: &Plane, threshold: f64) -> Vec<usize> {
    (0..cloud.len())
        .filter(|&i| plane.signed_distance(&cloud.points[i]).abs() <= threshold)
        .collect()
}

/// Least-squares plane over the given members: centroid plus the smallest
/// eigenvector of the scatter matrix, oriented so the normal points +z.
fn refit_plane(cloud: &PointCloud, members: &[usize]) -> Option<Plane> {
    if members.len() < 3 {
        return None;
    }
    let centroid = members
        .iter()
        .fold(Vector3::zeros(), |acc, &i| acc + cloud.points[i].position())
        / members.len() as f64;
    let mut scatter = Matrix3::zeros();
    for &i in members {
        let d = cloud.points[i].position() - centroid;
        scatter += d * d.transpose();
    }
    let eig = scatter.symmetric_eigen();
    let mut smallest = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] < eig.eigenvalues[smallest] {
            smallest = i;
        }
    }
    let normal: Vector3<f64> = eig.eigenvectors.column(smallest).into();
    let norm = normal.norm();
    if norm <= 1e-12 {
        return None;
    }
    let unit = normal / norm;
    Plane::new(unit, -unit.dot(&centroid))
        .ok()
        .map(Plane::oriented_up)
}

/// RANSAC ground-plane removal over 3-point samples.
///
/// The best sampled model is refit by least squares over its inliers, the
/// refit plane's inliers are removed, and the plane is reported with its
/// normal oriented upward. Fewer than 3 points is an error; a best inlier
/// fraction below `min_inlier_fraction` returns the cloud unmodified with
/// `plane: None`.
pub fn remove_ground(
    cloud: &PointCloud,
    cfg: &RansacConfig,
) -> Result<GroundSegmentation, PreprocessError> {
    let n = cloud.len();
    if n < 3 {
        return Err(PreprocessError::DegenerateInput { got: n });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut best: Option<(usize, Plane)> = None;
    for _ in 0..cfg.max_iterations {
        let picked = rand::seq::index::sample(&mut rng, n, 3);
        let a = cloud.points[picked.index(0)].position();
        let b = cloud.points[picked.index(1)].position();
        let c = cloud.points[picked.index(2)].position();
        let Some(plane) = Plane::from_three_points(a, b, c) else {
            continue;
        };
        let count = count_inliers(cloud, &plane, cfg.distance_threshold);
        if best.as_ref().is_none_or(|(best_count, _)| count > *best_count) {
            best = Some((count, plane));
        }
    }

    let passthrough = |cloud: &PointCloud| GroundSegmentation {
        nonground: cloud.clone(),
        ground_indices: Vec::new(),
        plane: None,
    };

    let Some((best_count, sample_plane)) = best else {
        return Ok(passthrough(cloud));
    };
    if (best_count as f64) < cfg.min_inlier_fraction * n as f64 {
        return Ok(passthrough(cloud));
    }

    let sample_members = inlier_indices(cloud, &sample_plane, cfg.distance_threshold);
    let plane = refit_plane(cloud, &sample_members).unwrap_or(sample_plane.oriented_up());
    let ground_indices = inlier_indices(cloud, &plane, cfg.distance_threshold);

    let ground_set: std::collections::HashSet<usize> = ground_indices.iter().copied().collect();
    let nonground_points = (0..n)
        .filter(|i| !ground_set.contains(i))
        .map(|i| cloud.points[i])
        .collect();

    Ok(GroundSegmentation {
        nonground: PointCloud::new(nonground_points, cloud.frame, cloud.timestamp),
        ground_indices,
        plane: Some(plane),
    })
}

/// Sensor-to-world transform using the ego pose.
pub fn to_world(cloud: &PointCloud, pose: &Pose6D) -> PointCloud {
    transform_cloud(cloud, &pose_to_transform(pose), Frame::World)
}
