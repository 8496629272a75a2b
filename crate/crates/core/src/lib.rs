//! Training-free LiDAR object identification and tracking.
//!
//! The pipeline turns a stream of LiDAR sweeps plus GPS/IMU records into
//! persistent object tracks without any learned models: an EKF estimates the
//! ego pose, RANSAC strips the ground plane, a kd-tree-backed DBSCAN segments
//! obstacles, each cluster's geometry becomes a viewpoint feature histogram,
//! and frame-to-frame identity is resolved by a chi-squared gate, a maximum
//! deviation test over the histogram CDFs, and a Bayesian motion model for
//! ties. The companion guide under `book/` walks through every stage.

pub mod association;
pub mod descriptor;
pub mod geometry;
pub mod ingest;
pub mod pipeline;
pub mod pose_ekf;
pub mod preprocess;
pub mod segmentation;
pub mod tracker;

pub use geometry::{Frame, Plane, Point3, PointCloud, Pose6D, RigidTransform};

// The guide's code samples run as doctests, so the book cannot drift from
// the library. `cargo test --doc` executes every snippet below.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    pub mod geometry {}
    #[doc = include_str!("../../../book/src/ingestion.md")]
    pub mod ingestion {}
    #[doc = include_str!("../../../book/src/ego-pose.md")]
    pub mod ego_pose {}
    #[doc = include_str!("../../../book/src/ground-removal.md")]
    pub mod ground_removal {}
    #[doc = include_str!("../../../book/src/clustering.md")]
    pub mod clustering {}
    #[doc = include_str!("../../../book/src/descriptors.md")]
    pub mod descriptors {}
    #[doc = include_str!("../../../book/src/association.md")]
    pub mod association {}
    #[doc = include_str!("../../../book/src/tracking.md")]
    pub mod tracking {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    pub mod pipeline {}
}
