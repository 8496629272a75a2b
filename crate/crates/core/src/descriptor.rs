//! Cluster geometry as a histogram: the viewpoint feature histogram, the
//! cumulative distribution derived from it, and the chi-squared distance used
//! to compare two histograms.
//!
//! The descriptor treats a cluster as a multi-modal PDF over 308 bins: four
//! pair-feature components relative to the centroid frame at 45 bins each,
//! plus a 128-bin component for the angle between each surface normal and the
//! centroid-to-viewpoint direction. The PDF's prefix sum is kept alongside it
//! because the association stage scores candidates on CDFs.

use nalgebra::Vector3;
use thiserror::Error;

/// Bins per pair-feature component.
pub const COMPONENT_BINS: usize = 45;
/// Pair-feature components (cos alpha, cos phi, theta, normalized distance).
pub const COMPONENTS: usize = 4;
/// Bins for the normal-to-viewpoint angle component.
pub const VIEWPOINT_BINS: usize = 128;
/// Total histogram length: 4 * 45 + 128.
pub const VFH_BINS: usize = COMPONENTS * COMPONENT_BINS + VIEWPOINT_BINS;

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("descriptor requires at least 3 points, got {got}")]
    DegenerateCluster { got: usize },
    #[error("histogram bin {index} is negative ({value})")]
    NegativeBin { index: usize, value: f64 },
    #[error("histogram has zero total mass")]
    ZeroMass,
}

/// Per-point unit normals, each flipped toward the viewpoint.
#[derive(Debug, Clone)]
pub struct NormalCloud {
    pub normals: Vec<Vector3<f64>>,
    /// Set where the local neighborhood was collinear and the normal had to
    /// be picked as an arbitrary (but deterministic) orthogonal direction.
    pub degenerate: Vec<bool>,
}

impl NormalCloud {
    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }
}

/// Normalized 308-bin histogram plus its prefix-sum CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct VfhDescriptor {
    pdf: Vec<f64>,
    cdf: Vec<f64>,
}

impl VfhDescriptor {
    /// Normalizes raw bin weights to sum 1 and derives the CDF.
    pub fn from_bins(bins: Vec<f64>) -> Result<Self, DescriptorError> {
        let cdf = cdf_of(&bins)?;
        let total: f64 = bins.iter().sum();
        let pdf = bins.into_iter().map(|b| b / total).collect();
        Ok(Self { pdf, cdf })
    }

    pub fn pdf(&self) -> &[f64] {
        &self.pdf
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    pub fn len(&self) -> usize {
        self.pdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pdf.is_empty()
    }
}

/// Prefix sum of a non-negative histogram, normalized so the last element is
/// exactly 1.
pub fn cdf_of(pdf: &[f64]) -> Result<Vec<f64>, DescriptorError> {
    for (index, &value) in pdf.iter().enumerate() {
        if value < 0.0 {
            return Err(DescriptorError::NegativeBin { index, value });
        }
    }
    let total: f64 = pdf.iter().sum();
    if total <= 0.0 {
        return Err(DescriptorError::ZeroMass);
    }
    let mut acc = 0.0;
    Ok(pdf
        .iter()
        .map(|&v| {
            acc += v;
            acc / total
        })
        .collect())
}

/// Chi-squared histogram distance: sum of (a-b)^2 / (a+b) over bins, with
/// empty bins contributing zero. Bounded by 2 for normalized histograms.
pub fn chi_squared_distance(h1: &[f64], h2: &[f64]) -> f64 {
    debug_assert_eq!(h1.len(), h2.len());
    h1.iter()
        .zip(h2.iter())
        .map(|(&a, &b)| {
            let s = a + b;
            if s == 0.0 {
                0.0
            } else {
                let d = a - b;
                d * d / s
            }
        })
        .sum()
}

fn smallest_eigenvector(cov: &nalgebra::Matrix3<f64>) -> (Vector3<f64>, Vector3<f64>, [f64; 3]) {
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let smallest: Vector3<f64> = eig.eigenvectors.column(order[0]).into();
    let largest: Vector3<f64> = eig.eigenvectors.column(order[2]).into();
    let values = [
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    ];
    (smallest, largest, values)
}

/// The k nearest neighbors of `query`, in (distance, coordinate) order.
/// Coordinate tie-breaks keep the selection independent of input permutation.
fn k_nearest(points: &[Vector3<f64>], query: usize, k: usize) -> Vec<usize> {
    let q = points[query];
    let mut order: Vec<usize> = (0..points.len()).collect();
    let key = |i: usize| {
        let p = points[i];
        ((p - q).norm_squared(), p.x, p.y, p.z)
    };
    let cmp = |&a: &usize, &b: &usize| {
        let (da, xa, ya, za) = key(a);
        let (db, xb, yb, zb) = key(b);
        da.total_cmp(&db)
            .then(xa.total_cmp(&xb))
            .then(ya.total_cmp(&yb))
            .then(za.total_cmp(&zb))
    };
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_by(cmp);
    order
}

/// Per-point plane-fit normals over the k nearest neighbors, flipped toward
/// the viewpoint. `k` is clamped to the cluster size; collinear neighborhoods
/// fall back to a deterministic orthogonal direction and are flagged.
pub fn estimate_normals(
    points: &[Vector3<f64>],
    k: usize,
    viewpoint: &Vector3<f64>,
) -> NormalCloud {
    let k = k.min(points.len()).max(1);
    let mut normals = Vec::with_capacity(points.len());
    let mut degenerate = Vec::with_capacity(points.len());

    for i in 0..points.len() {
        let neighbors = k_nearest(points, i, k);
        let mean = neighbors
            .iter()
            .fold(Vector3::zeros(), |acc, &j| acc + points[j])
            / neighbors.len() as f64;
        let mut cov = nalgebra::Matrix3::zeros();
        for &j in &neighbors {
            let d = points[j] - mean;
            cov += d * d.transpose();
        }
        let (smallest, largest, values) = smallest_eigenvector(&cov);

        // Collinear neighborhood: the two smallest eigenvalues both vanish
        // relative to the spread along the line.
        let collinear = values[1] <= 1e-12 * values[2].max(1e-300);
        let mut normal = if collinear {
            let line = if largest.norm() > 0.0 {
                largest.normalize()
            } else {
                Vector3::z()
            };
            let mut candidate = line.cross(&Vector3::z());
            if candidate.norm() < 1e-6 {
                candidate = line.cross(&Vector3::x());
            }
            candidate.normalize()
        } else {
            smallest.normalize()
        };

        if normal.dot(&(viewpoint - points[i])) < 0.0 {
            normal = -normal;
        }
        normals.push(normal);
        degenerate.push(collinear);
    }

    NormalCloud {
        normals,
        degenerate,
    }
}

fn bin_index(value: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let t = (value - lo) / (hi - lo);
    let idx = (t * bins as f64).floor() as isize;
    idx.clamp(0, bins as isize - 1) as usize
}

/// Builds the viewpoint feature histogram for a cluster.
///
/// The result is bit-identical under any permutation of the (point, normal)
/// pairs: accumulation happens in a canonical coordinate-sorted order, and
/// bin increments are exact unit counts.
pub fn compute_vfh(
    points: &[Vector3<f64>],
    normals: &NormalCloud,
    viewpoint: &Vector3<f64>,
) -> Result<VfhDescriptor, DescriptorError> {
    if points.len() < 3 {
        return Err(DescriptorError::DegenerateCluster { got: points.len() });
    }
    debug_assert_eq!(points.len(), normals.len());

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (points[a], points[b]);
        let (na, nb) = (&normals.normals[a], &normals.normals[b]);
        pa.x.total_cmp(&pb.x)
            .then(pa.y.total_cmp(&pb.y))
            .then(pa.z.total_cmp(&pb.z))
            .then(na.x.total_cmp(&nb.x))
            .then(na.y.total_cmp(&nb.y))
            .then(na.z.total_cmp(&nb.z))
    });

    let centroid = order
        .iter()
        .fold(Vector3::zeros(), |acc, &i| acc + points[i])
        / points.len() as f64;
    let mean_normal = order
        .iter()
        .fold(Vector3::zeros(), |acc, &i| acc + normals.normals[i]);
    let u = if mean_normal.norm() > 1e-12 {
        mean_normal.normalize()
    } else {
        Vector3::z()
    };
    let view_dir = {
        let d = viewpoint - centroid;
        if d.norm() > 1e-12 {
            d.normalize()
        } else {
            Vector3::z()
        }
    };
    let d_max = order
        .iter()
        .map(|&i| (points[i] - centroid).norm())
        .fold(0.0_f64, f64::max);

    let mut bins = vec![0.0_f64; VFH_BINS];
    let component = |c: usize, b: usize| c * COMPONENT_BINS + b;

    for &i in &order {
        let normal = normals.normals[i];
        let rel = points[i] - centroid;
        let dist = rel.norm();

        if dist > 1e-12 {
            let dir = rel / dist;
            // Darboux frame anchored at the centroid with the mean normal as u.
            let v_raw = rel.cross(&u);
            if v_raw.norm() > 1e-12 {
                let v = v_raw.normalize();
                let w = u.cross(&v);
                let cos_alpha = v.dot(&normal).clamp(-1.0, 1.0);
                let cos_phi = u.dot(&dir).clamp(-1.0, 1.0);
                let theta = w.dot(&normal).atan2(u.dot(&normal));
                bins[component(0, bin_index(cos_alpha, -1.0, 1.0, COMPONENT_BINS))] += 1.0;
                bins[component(1, bin_index(cos_phi, -1.0, 1.0, COMPONENT_BINS))] += 1.0;
                bins[component(2, bin_index(theta, -std::f64::consts::PI, std::f64::consts::PI, COMPONENT_BINS))] += 1.0;
            }
            let d_norm = if d_max > 0.0 { dist / d_max } else { 0.0 };
            bins[component(3, bin_index(d_norm, 0.0, 1.0, COMPONENT_BINS))] += 1.0;
        }

        let cos_beta = normal.dot(&view_dir).clamp(-1.0, 1.0);
        bins[COMPONENTS * COMPONENT_BINS + bin_index(cos_beta, -1.0, 1.0, VIEWPOINT_BINS)] += 1.0;
    }

    VfhDescriptor::from_bins(bins)
}
