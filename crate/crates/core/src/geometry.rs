//! Geometry and coordinate-frame primitives shared by every pipeline stage.
//!
//! Everything downstream works on two frames only: the `Sensor` frame the
//! scanner reports in, and a `World` frame anchored by the ego pose. All
//! types are plain immutable values.

use nalgebra::{Matrix3, SMatrix, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used by the constructors that validate rotations, quaternions
/// and plane normals.
pub const ORTHONORMALITY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point has non-finite coordinates ({x}, {y}, {z})")]
    NonFinitePoint { x: f64, y: f64, z: f64 },
    #[error("rotation matrix is not orthonormal (max residual {residual:.3e})")]
    InvalidRotation { residual: f64 },
    #[error("rotation matrix determinant is {det}, expected +1")]
    ReflectingRotation { det: f64 },
    #[error("quaternion norm {norm} is not 1 within {ORTHONORMALITY_TOL}")]
    NonUnitQuaternion { norm: f64 },
    #[error("plane normal has norm {norm}, expected 1 within {ORTHONORMALITY_TOL}")]
    NonUnitNormal { norm: f64 },
    #[error("pose covariance is not symmetric (max asymmetry {residual:.3e})")]
    AsymmetricCovariance { residual: f64 },
}

/// Coordinate frame a cloud lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    Sensor,
    World,
}

/// A single return: position in meters plus unitless reflectance in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        (self.position() - other.position()).norm()
    }
}

/// An ordered collection of points in a named frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub frame: Frame,
    /// Seconds, monotonic within a run.
    pub timestamp: f64,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, frame: Frame, timestamp: f64) -> Self {
        Self {
            points,
            frame,
            timestamp,
        }
    }

    pub fn empty(frame: Frame, timestamp: f64) -> Self {
        Self::new(Vec::new(), frame, timestamp)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Ego-vehicle pose: position, orientation, and a 6x6 covariance over
/// (x, y, z, roll, pitch, yaw).
#[derive(Debug, Clone, PartialEq)]
pub struct Pose6D {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    pub covariance: SMatrix<f64, 6, 6>,
}

impl Pose6D {
    pub fn new(
        position: Vector3<f64>,
        orientation: UnitQuaternion<f64>,
        covariance: SMatrix<f64, 6, 6>,
    ) -> Result<Self, GeometryError> {
        let norm = orientation.as_ref().norm();
        if (norm - 1.0).abs() > ORTHONORMALITY_TOL {
            return Err(GeometryError::NonUnitQuaternion { norm });
        }
        let residual = (covariance - covariance.transpose()).abs().max();
        if residual > ORTHONORMALITY_TOL {
            return Err(GeometryError::AsymmetricCovariance { residual });
        }
        Ok(Self {
            position,
            orientation,
            covariance,
        })
    }

    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
            covariance: SMatrix::zeros(),
        }
    }
}

/// Plane a*x + b*y + c*z + d = 0 with unit normal (a, b, c).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    normal: Vector3<f64>,
    offset: f64,
}

impl Plane {
    pub fn new(normal: Vector3<f64>, offset: f64) -> Result<Self, GeometryError> {
        let norm = normal.norm();
        if (norm - 1.0).abs() > ORTHONORMALITY_TOL {
            return Err(GeometryError::NonUnitNormal { norm });
        }
        Ok(Self { normal, offset })
    }

    /// Builds a plane from any non-zero normal by normalizing it.
    pub fn from_normal_offset(normal: Vector3<f64>, offset: f64) -> Option<Self> {
        let norm = normal.norm();
        if norm <= f64::EPSILON {
            return None;
        }
        Some(Self {
            normal: normal / norm,
            offset: offset / norm,
        })
    }

    /// Plane through three points, `None` when they are collinear.
    pub fn from_three_points(a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>) -> Option<Self> {
        let normal = (b - a).cross(&(c - a));
        let norm = normal.norm();
        if norm <= 1e-12 {
            return None;
        }
        let unit = normal / norm;
        Some(Self {
            normal: unit,
            offset: -unit.dot(&a),
        })
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Signed point-to-plane distance a*x + b*y + c*z + d. Signed because the
    /// normal is unit length.
    pub fn signed_distance(&self, p: &Point3) -> f64 {
        self.normal.dot(&p.position()) + self.offset
    }

    /// Same plane with the normal oriented so its z component is positive.
    pub fn oriented_up(self) -> Self {
        if self.normal.z < 0.0 {
            Self {
                normal: -self.normal,
                offset: -self.offset,
            }
        } else {
            self
        }
    }
}

/// Signed point-to-plane distance, free-function form.
pub fn plane_distance(p: &Point3, plane: &Plane) -> f64 {
    plane.signed_distance(p)
}

/// Rigid motion: p' = R * p + t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let residual = (rotation * rotation.transpose() - Matrix3::identity())
            .abs()
            .max();
        if residual > ORTHONORMALITY_TOL {
            return Err(GeometryError::InvalidRotation { residual });
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMALITY_TOL {
            return Err(GeometryError::ReflectingRotation { det });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_point(&self, p: &Point3) -> Point3 {
        let q = self.apply(&p.position());
        Point3::new(q.x, q.y, q.z, p.intensity)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// self ∘ other: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

/// Applies a rigid transform to every point and relabels the cloud's frame.
/// Point count and order are preserved.
pub fn transform_cloud(cloud: &PointCloud, tf: &RigidTransform, target_frame: Frame) -> PointCloud {
    let points = cloud.points.iter().map(|p| tf.apply_point(p)).collect();
    PointCloud {
        points,
        frame: target_frame,
        timestamp: cloud.timestamp,
    }
}

/// Converts a pose into the matrix form used for batch cloud transforms.
pub fn pose_to_transform(pose: &Pose6D) -> RigidTransform {
    RigidTransform {
        rotation: pose.orientation.to_rotation_matrix().into_inner(),
        translation: pose.position,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cloud_of(points: &[(f64, f64, f64)]) -> PointCloud {
        PointCloud::new(
            points
                .iter()
                .map(|&(x, y, z)| Point3::new(x, y, z, 0.0))
                .collect(),
            Frame::Sensor,
            0.0,
        )
    }

    #[test]
    fn identity_transform_preserves_points() {
        let cloud = cloud_of(&[(1.0, 2.0, 3.0), (-4.0, 0.5, 9.0)]);
        let out = transform_cloud(&cloud, &RigidTransform::identity(), Frame::World);
        assert_eq!(out.points, cloud.points);
        assert_eq!(out.frame, Frame::World);
    }

    #[test]
    fn pure_translation_shifts_origin() {
        let cloud = cloud_of(&[(0.0, 0.0, 0.0)]);
        let tf = RigidTransform::from_translation(Vector3::new(1.0, 2.0, 3.0));
        let out = transform_cloud(&cloud, &tf, Frame::World);
        assert_eq!(out.points[0], Point3::new(1.0, 2.0, 3.0, 0.0));
    }

    #[test]
    fn yaw_quarter_turn_rotates_x_to_y() {
        // Hand-built 90 degree yaw matrix: columns are images of the axes.
        let rot = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let tf = RigidTransform::new(rot, Vector3::zeros()).unwrap();
        let out = tf.apply(&Vector3::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(out.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.y, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn invalid_rotation_is_rejected() {
        let skewed = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            RigidTransform::new(skewed, Vector3::zeros()),
            Err(GeometryError::InvalidRotation { .. })
        ));
    }

    #[test]
    fn plane_distance_examples() {
        let ground = Plane::new(Vector3::new(0.0, 0.0, 1.0), 0.0).unwrap();
        assert_eq!(plane_distance(&Point3::new(0.0, 0.0, 0.0, 0.0), &ground), 0.0);
        assert_eq!(plane_distance(&Point3::new(0.0, 0.0, 2.0, 0.0), &ground), 2.0);

        let raised = Plane::new(Vector3::new(0.0, 0.0, 1.0), -0.5).unwrap();
        assert_abs_diff_eq!(
            plane_distance(&Point3::new(1.0, 1.0, 1.0, 0.0), &raised),
            0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn plane_distance_is_linear_in_direction_components() {
        let plane = Plane::new(Vector3::new(0.0, 0.0, 1.0), -0.25).unwrap();
        let base = Point3::new(0.3, -0.7, 1.1, 0.0);
        let d0 = plane.signed_distance(&base);
        // Moving along the normal adds exactly the step; moving in-plane adds nothing.
        let up = Point3::new(base.x, base.y, base.z + 2.0, 0.0);
        let side = Point3::new(base.x + 5.0, base.y - 3.0, base.z, 0.0);
        assert_abs_diff_eq!(plane.signed_distance(&up), d0 + 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(plane.signed_distance(&side), d0, epsilon = 1e-12);
    }

    #[test]
    fn pose_to_transform_identity() {
        let tf = pose_to_transform(&Pose6D::identity());
        assert_eq!(tf, RigidTransform::identity());
    }

    #[test]
    fn pose_to_transform_half_turn_yaw() {
        // Quaternion algebra: yaw pi about z gives diag(-1, -1, 1).
        let pose = Pose6D {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::from_euler_angles(0.0, 0.0, std::f64::consts::PI),
            covariance: SMatrix::zeros(),
        };
        let tf = pose_to_transform(&pose);
        let expected = Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0));
        assert_abs_diff_eq!((tf.rotation() - expected).abs().max(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn pose_to_transform_copies_position() {
        let pose = Pose6D {
            position: Vector3::new(5.0, 0.0, 0.0),
            orientation: UnitQuaternion::identity(),
            covariance: SMatrix::zeros(),
        };
        let tf = pose_to_transform(&pose);
        assert_eq!(*tf.translation(), Vector3::new(5.0, 0.0, 0.0));
    }

    #[test]
    fn non_unit_quaternion_rejected_by_pose_constructor() {
        let q = UnitQuaternion::identity();
        // Force a bad quaternion through the raw representation.
        let bad = nalgebra::Unit::new_unchecked(q.as_ref() * 1.5);
        assert!(matches!(
            Pose6D::new(Vector3::zeros(), bad, SMatrix::zeros()),
            Err(GeometryError::NonUnitQuaternion { .. })
        ));
    }

    #[test]
    fn transform_roundtrip_restores_points() {
        let rot = nalgebra::Rotation3::from_euler_angles(0.3, -0.2, 1.1).into_inner();
        let tf = RigidTransform::new(rot, Vector3::new(4.0, -2.0, 0.5)).unwrap();
        let cloud = cloud_of(&[(1.0, 2.0, 3.0), (-0.5, 0.0, 7.25), (10.0, -3.0, 0.0)]);
        let there = transform_cloud(&cloud, &tf, Frame::World);
        let back = transform_cloud(&there, &tf.inverse(), Frame::Sensor);
        for (a, b) in cloud.points.iter().zip(back.points.iter()) {
            assert!(a.distance(b) < 1e-9);
        }
    }

    #[test]
    fn transform_preserves_pairwise_distances() {
        let rot = nalgebra::Rotation3::from_euler_angles(-0.7, 0.1, 2.0).into_inner();
        let tf = RigidTransform::new(rot, Vector3::new(-3.0, 8.0, 1.5)).unwrap();
        let cloud = cloud_of(&[(0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (-2.0, 5.0, 0.3)]);
        let out = transform_cloud(&cloud, &tf, Frame::World);
        for i in 0..cloud.len() {
            for j in (i + 1)..cloud.len() {
                let before = cloud.points[i].distance(&cloud.points[j]);
                let after = out.points[i].distance(&out.points[j]);
                assert_abs_diff_eq!(before, after, epsilon = 1e-9);
            }
        }
    }
}
