//! Frame-stream sources: the KITTI raw-data reader and a deterministic
//! synthetic scene generator for desk-scale verification.

pub mod kitti;
pub mod synthetic;

use crate::geometry::PointCloud;
use crate::pose_ekf::ImuSample;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kitti::{read_oxts, read_velodyne_bin, write_velodyne_bin, KittiReader, OxtsRecord};
pub use synthetic::{Shape, SyntheticObject, SyntheticScenario, SyntheticStream};

/// Earth radius used by the Mercator projection, meters.
pub const EARTH_RADIUS: f64 = 6_378_137.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: velodyne file length {len} is not a multiple of 16")]
    MalformedVelodyne { path: String, len: u64 },
    #[error("{path}:{line}: {what}")]
    Parse {
        path: String,
        line: usize,
        what: String,
    },
    #[error("missing input: {what}")]
    MissingData { what: String },
    #[error("timestamps not strictly increasing at frame {index}")]
    NonMonotonicTimestamps { index: usize },
    #[error("frame count mismatch: {clouds} clouds vs {nav} nav records")]
    CountMismatch { clouds: usize, nav: usize },
}

/// A GPS fix in degrees/meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub lat: f64,
    pub lon: f64,
    pub alt: f64,
}

/// One frame of raw sensor input.
#[derive(Debug, Clone)]
pub struct SensorFrame {
    /// Sensor-frame cloud.
    pub cloud: PointCloud,
    pub imu: ImuSample,
    pub gps: GpsFix,
    /// World-frame velocity (x east, y north, z up), m/s.
    pub velocity: Vector3<f64>,
    /// Roll/pitch/yaw reported by the nav source, radians.
    pub rpy: Vector3<f64>,
    /// Seconds, strictly increasing across the stream.
    pub timestamp: f64,
}

/// One ground-truth object in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub id: u64,
    pub centroid: [f64; 3],
    /// Indices into that frame's sensor cloud.
    pub indices: Vec<u32>,
}

impl GtObject {
    pub fn centroid_vec(&self) -> Vector3<f64> {
        Vector3::new(self.centroid[0], self.centroid[1], self.centroid[2])
    }
}

/// Ground truth for one frame; object ids are stable across frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFrame {
    pub frame: u64,
    pub objects: Vec<GtObject>,
}

/// A single-consumer stream of sensor frames, optionally with ground truth.
pub trait FrameSource {
    fn next_frame(
        &mut self,
    ) -> Result<Option<(SensorFrame, Option<GroundTruthFrame>)>, IngestError>;
}

fn mercator(gps: &GpsFix, scale: f64) -> (f64, f64) {
    let lon = gps.lon.to_radians();
    let lat = gps.lat.to_radians();
    let x = scale * EARTH_RADIUS * lon;
    let y = scale * EARTH_RADIUS * (std::f64::consts::FRAC_PI_4 + lat / 2.0).tan().ln();
    (x, y)
}

/// Mercator projection of a GPS fix into local metric coordinates, with the
/// origin fix mapping to (0, 0). The scale is fixed by the origin latitude.
pub fn gps_to_local(gps: &GpsFix, origin: &GpsFix) -> (f64, f64) {
    let scale = origin.lat.to_radians().cos();
    let (x, y) = mercator(gps, scale);
    let (x0, y0) = mercator(origin, scale);
    (x - x0, y - y0)
}

/// Inverse of [`gps_to_local`]: local metric coordinates back to a fix.
pub fn local_to_gps(x: f64, y: f64, alt: f64, origin: &GpsFix) -> GpsFix {
    let scale = origin.lat.to_radians().cos();
    let (x0, y0) = mercator(origin, scale);
    let lon = ((x + x0) / (scale * EARTH_RADIUS)).to_degrees();
    let lat = (2.0 * ((y + y0) / (scale * EARTH_RADIUS)).exp().atan()
        - std::f64::consts::FRAC_PI_2)
        .to_degrees();
    GpsFix { lat, lon, alt }
}
