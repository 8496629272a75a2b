//! Deterministic synthetic scenes: parametric objects on constant-velocity
//! paths over a noisy ground plane, sampled into sensor-frame clouds with
//! exact per-point ground truth. The RNG seed fully determines the stream.

use super::{local_to_gps, FrameSource, GpsFix, GroundTruthFrame, GtObject, IngestError, SensorFrame};
use crate::geometry::{Frame, Point3, PointCloud};
use crate::pose_ekf::ImuSample;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Object surface family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Box,
    Cylinder,
    Sphere,
}

/// One scripted object: a shape on a constant-velocity path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticObject {
    pub shape: Shape,
    /// Box: full extents (x, y, z). Cylinder: [radius, _, height].
    /// Sphere: [radius, _, _].
    pub size: [f64; 3],
    /// Initial center, world frame, meters.
    pub position: [f64; 3],
    /// Constant velocity, m/s.
    pub velocity: [f64; 3],
}

impl SyntheticObject {
    pub fn center_at(&self, t: f64) -> Vector3<f64> {
        Vector3::from(self.position) + Vector3::from(self.velocity) * t
    }
}

/// Scenario script. The ego starts at the world origin, level, facing +x,
/// and moves with `ego_velocity`; the sensor origin is the ego position.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticScenario {
    pub objects: Vec<SyntheticObject>,
    pub ego_velocity: [f64; 3],
    /// Ground plane height in world/sensor z, meters.
    pub ground_z: f64,
    /// Half-extent of the square ground patch sampled around the ego.
    pub ground_extent: f64,
    pub ground_points: usize,
    /// Gaussian sigma on ground point heights.
    pub noise_sigma: f64,
    pub points_per_object: usize,
    pub frames: u64,
    pub rate_hz: f64,
    pub rng_seed: u64,
    /// Objects farther than this from the ego are neither sampled nor listed
    /// in the ground truth for that frame.
    pub sensor_range: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub origin_alt: f64,
}

impl Default for SyntheticScenario {
    fn default() -> Self {
        Self {
            objects: Vec::new(),
            ego_velocity: [0.0; 3],
            ground_z: -1.7,
            ground_extent: 25.0,
            ground_points: 1500,
            noise_sigma: 0.02,
            points_per_object: 400,
            frames: 20,
            rate_hz: 10.0,
            rng_seed: 0,
            sensor_range: 48.0,
            origin_lat: 49.0,
            origin_lon: 8.4,
            origin_alt: 110.0,
        }
    }
}

impl SyntheticScenario {
    pub fn from_toml_str(text: &str) -> Result<Self, IngestError> {
        toml::from_str(text).map_err(|e| IngestError::Parse {
            path: "<scenario>".to_string(),
            line: 0,
            what: e.to_string(),
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|e| IngestError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| IngestError::Parse {
            path: path.display().to_string(),
            line: 0,
            what: e.to_string(),
        })
    }

    pub fn origin(&self) -> GpsFix {
        GpsFix {
            lat: self.origin_lat,
            lon: self.origin_lon,
            alt: self.origin_alt,
        }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }
}

fn sample_sphere(radius: f64, rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vector3::new(r * phi.cos(), r * phi.sin(), z) * radius
}

fn sample_box(extents: [f64; 3], rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let [ex, ey, ez] = extents;
    // Pick a face proportionally to its area, then a uniform point on it.
    let areas = [ey * ez, ey * ez, ex * ez, ex * ez, ex * ey, ex * ey];
    let total: f64 = areas.iter().sum();
    let mut pick = rng.gen_range(0.0..total);
    let mut face = 0;
    for (i, a) in areas.iter().enumerate() {
        if pick < *a {
            face = i;
            break;
        }
        pick -= a;
    }
    let u: f64 = rng.gen_range(-0.5..0.5);
    let v: f64 = rng.gen_range(-0.5..0.5);
    match face {
        0 => Vector3::new(ex / 2.0, u * ey, v * ez),
        1 => Vector3::new(-ex / 2.0, u * ey, v * ez),
        2 => Vector3::new(u * ex, ey / 2.0, v * ez),
        3 => Vector3::new(u * ex, -ey / 2.0, v * ez),
        4 => Vector3::new(u * ex, v * ey, ez / 2.0),
        _ => Vector3::new(u * ex, v * ey, -ez / 2.0),
    }
}

fn sample_cylinder(radius: f64, height: f64, rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let lateral = std::f64::consts::TAU * radius * height;
    let cap = std::f64::consts::PI * radius * radius;
    let pick: f64 = rng.gen_range(0.0..lateral + 2.0 * cap);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    if pick < lateral {
        let z: f64 = rng.gen_range(-0.5..0.5) * height;
        Vector3::new(radius * phi.cos(), radius * phi.sin(), z)
    } else {
        let rho = radius * rng.gen_range(0.0_f64..1.0).sqrt();
        let z = if pick < lateral + cap { height / 2.0 } else { -height / 2.0 };
        Vector3::new(rho * phi.cos(), rho * phi.sin(), z)
    }
}

fn sample_surface(obj: &SyntheticObject, rng: &mut ChaCha8Rng) -> Vector3<f64> {
    match obj.shape {
        Shape::Sphere => sample_sphere(obj.size[0], rng),
        Shape::Box => sample_box(obj.size, rng),
        Shape::Cylinder => sample_cylinder(obj.size[0], obj.size[2], rng),
    }
}

/// Frame stream over a scenario. Bit-reproducible for a fixed seed.
pub struct SyntheticStream {
    scenario: SyntheticScenario,
    rng: ChaCha8Rng,
    frame: u64,
}

impl SyntheticStream {
    pub fn new(scenario: SyntheticScenario) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(scenario.rng_seed);
        Self {
            scenario,
            rng,
            frame: 0,
        }
    }

    pub fn scenario(&self) -> &SyntheticScenario {
        &self.scenario
    }

    /// Ego position at frame time t.
    pub fn ego_at(&self, t: f64) -> Vector3<f64> {
        Vector3::from(self.scenario.ego_velocity) * t
    }
}

impl FrameSource for SyntheticStream {
    fn next_frame(
        &mut self,
    ) -> Result<Option<(SensorFrame, Option<GroundTruthFrame>)>, IngestError> {
        let sc = &self.scenario;
        if self.frame >= sc.frames {
            return Ok(None);
        }
        let frame_index = self.frame;
        self.frame += 1;
        let t = frame_index as f64 * sc.dt();
        let ego = Vector3::from(sc.ego_velocity) * t;

        let mut world_points: Vec<Point3> = Vec::new();
        let mut objects = Vec::new();
        for (id, obj) in sc.objects.iter().enumerate() {
            let center = obj.center_at(t);
            if (center - ego).norm() > sc.sensor_range {
                continue;
            }
            let start = world_points.len();
            for _ in 0..sc.points_per_object {
                let p = center + sample_surface(obj, &mut self.rng);
                let intensity: f64 = self.rng.gen_range(0.0..1.0);
                world_points.push(Point3::new(p.x, p.y, p.z, intensity));
            }
            objects.push(GtObject {
                id: id as u64,
                centroid: [center.x, center.y, center.z],
                indices: (start as u32..world_points.len() as u32).collect(),
            });
        }

        let noise = if sc.noise_sigma > 0.0 {
            Some(Normal::new(0.0, sc.noise_sigma).expect("finite sigma"))
        } else {
            None
        };
        for _ in 0..sc.ground_points {
            let x = ego.x + self.rng.gen_range(-sc.ground_extent..sc.ground_extent);
            let y = ego.y + self.rng.gen_range(-sc.ground_extent..sc.ground_extent);
            let dz = noise.map(|n| n.sample(&mut self.rng)).unwrap_or(0.0);
            let intensity: f64 = self.rng.gen_range(0.0..1.0);
            world_points.push(Point3::new(x, y, sc.ground_z + dz, intensity));
        }

        // The ego is level and axis-aligned, so world-to-sensor is a pure
        // translation by the ego position.
        let sensor_points: Vec<Point3> = world_points
            .iter()
            .map(|p| Point3::new(p.x - ego.x, p.y - ego.y, p.z - ego.z, p.intensity))
            .collect();

        let frame = SensorFrame {
            cloud: PointCloud::new(sensor_points, Frame::Sensor, t),
            imu: ImuSample::level_rest(),
            gps: local_to_gps(ego.x, ego.y, sc.origin_alt + ego.z, &sc.origin()),
            velocity: Vector3::from(sc.ego_velocity),
            rpy: Vector3::zeros(),
            timestamp: t,
        };
        let truth = GroundTruthFrame {
            frame: frame_index,
            objects,
        };
        Ok(Some((frame, Some(truth))))
    }
}
