//! Ego-vehicle pose filter: strapdown IMU prediction corrected by GPS
//! position fixes and velocity measurements.
//!
//! The state is 9-dimensional (position, velocity, roll/pitch/yaw) with a
//! full 9x9 covariance. IMU biases are not estimated. Every update
//! re-symmetrizes the covariance so Cholesky-based PSD checks stay honest.

use crate::geometry::Pose6D;
use nalgebra::{Matrix3, SMatrix, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Gravity along world -z, in m/s^2.
pub const GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

#[derive(Debug, Error)]
pub enum EkfError {
    #[error("dt must lie in (0, 1) seconds, got {dt}")]
    InvalidDt { dt: f64 },
    #[error("measurement contains non-finite components")]
    NonFiniteMeasurement,
    #[error("innovation covariance is numerically singular")]
    DegenerateInnovation,
    #[error("config field {field} must be positive, got {value}")]
    NonPositiveConfig { field: &'static str, value: f64 },
}

/// One IMU sample: specific force and body angular rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    /// Accelerometer reading (specific force) in the body frame, m/s^2.
    pub accel: Vector3<f64>,
    /// Gyro rates in the body frame, rad/s.
    pub gyro: Vector3<f64>,
}

impl ImuSample {
    pub fn new(accel: Vector3<f64>, gyro: Vector3<f64>) -> Self {
        Self { accel, gyro }
    }

    /// What a perfect, level, non-accelerating IMU reads: gravity reaction only.
    pub fn level_rest() -> Self {
        Self {
            accel: -GRAVITY,
            gyro: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.accel.iter().all(|v| v.is_finite()) && self.gyro.iter().all(|v| v.is_finite())
    }
}

/// Filter tuning. All noise parameters must be positive.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct EkfConfig {
    /// Accelerometer noise density, m/s^2 per sqrt(Hz).
    pub accel_density: f64,
    /// Gyro noise density, rad/s per sqrt(Hz).
    pub gyro_density: f64,
    /// GPS position measurement sigma, meters.
    pub gps_sigma: f64,
    /// Velocity measurement sigma, m/s.
    pub velocity_sigma: f64,
    pub initial_position_var: f64,
    pub initial_velocity_var: f64,
    pub initial_orientation_var: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self {
            accel_density: 0.1,
            gyro_density: 0.01,
            gps_sigma: 0.5,
            velocity_sigma: 0.2,
            initial_position_var: 1.0,
            initial_velocity_var: 1.0,
            initial_orientation_var: 0.1,
        }
    }
}

impl EkfConfig {
    pub fn validate(&self) -> Result<(), EkfError> {
        let fields = [
            ("accel_density", self.accel_density),
            ("gyro_density", self.gyro_density),
            ("gps_sigma", self.gps_sigma),
            ("velocity_sigma", self.velocity_sigma),
            ("initial_position_var", self.initial_position_var),
            ("initial_velocity_var", self.initial_velocity_var),
            ("initial_orientation_var", self.initial_orientation_var),
        ];
        for (field, value) in fields {
            if !value.is_finite() || value <= 0.0 {
                return Err(EkfError::NonPositiveConfig { field, value });
            }
        }
        Ok(())
    }
}

/// Filter belief: mean and 9x9 covariance over (p, v, rpy).
#[derive(Debug, Clone, PartialEq)]
pub struct EgoState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Roll, pitch, yaw in radians; yaw wrapped to (-pi, pi].
    pub orientation: Vector3<f64>,
    pub covariance: SMatrix<f64, 9, 9>,
}

impl EgoState {
    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_euler_angles(self.orientation.x, self.orientation.y, self.orientation.z)
    }
}

pub(crate) fn wrap_angle(a: f64) -> f64 {
    let mut w = (a + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU);
    if w == 0.0 {
        w = std::f64::consts::TAU;
    }
    w - std::f64::consts::PI
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn symmetrize9(m: &mut SMatrix<f64, 9, 9>) {
    *m = (*m + m.transpose()) * 0.5;
}

/// Ego-pose extended Kalman filter. Single-writer: one instance per pipeline.
#[derive(Debug, Clone)]
pub struct EgoEkf {
    state: EgoState,
    cfg: EkfConfig,
    last_innovation: Option<Vector3<f64>>,
}

impl EgoEkf {
    pub fn new(cfg: EkfConfig) -> Result<Self, EkfError> {
        cfg.validate()?;
        let mut covariance = SMatrix::zeros();
        for i in 0..3 {
            covariance[(i, i)] = cfg.initial_position_var;
            covariance[(3 + i, 3 + i)] = cfg.initial_velocity_var;
            covariance[(6 + i, 6 + i)] = cfg.initial_orientation_var;
        }
        Ok(Self {
            state: EgoState {
                position: Vector3::zeros(),
                velocity: Vector3::zeros(),
                orientation: Vector3::zeros(),
                covariance,
            },
            cfg,
            last_innovation: None,
        })
    }

    pub fn with_state(cfg: EkfConfig, state: EgoState) -> Result<Self, EkfError> {
        cfg.validate()?;
        Ok(Self {
            state,
            cfg,
            last_innovation: None,
        })
    }

    pub fn state(&self) -> &EgoState {
        &self.state
    }

    /// Innovation of the most recent correction, for diagnostics.
    pub fn last_innovation(&self) -> Option<Vector3<f64>> {
        self.last_innovation
    }

    /// Strapdown propagation: gyro integrates orientation, the accelerometer
    /// reading is rotated to world and gravity removed, then velocity and
    /// position integrate forward.
    pub fn predict(&mut self, imu: &ImuSample, dt: f64) -> Result<(), EkfError> {
        if !(dt > 0.0 && dt < 1.0) {
            return Err(EkfError::InvalidDt { dt });
        }
        if !imu.is_finite() {
            return Err(EkfError::NonFiniteMeasurement);
        }

        let q = self.state.quaternion();
        let rot = q.to_rotation_matrix().into_inner();
        let accel_world = rot * imu.accel + GRAVITY;

        self.state.position += self.state.velocity * dt + accel_world * (0.5 * dt * dt);
        self.state.velocity += accel_world * dt;
        let q_next = q * UnitQuaternion::from_scaled_axis(imu.gyro * dt);
        let (roll, pitch, yaw) = q_next.euler_angles();
        self.state.orientation = Vector3::new(roll, pitch, wrap_angle(yaw));

        // Linearized dynamics: position follows velocity, velocity follows
        // orientation error through the rotated specific force.
        let mut f = SMatrix::<f64, 9, 9>::identity();
        let dv = Matrix3::identity() * dt;
        let da = -(rot * skew(&imu.accel)) * dt;
        f.fixed_view_mut::<3, 3>(0, 3).copy_from(&dv);
        f.fixed_view_mut::<3, 3>(3, 6).copy_from(&da);

        let qa = self.cfg.accel_density * self.cfg.accel_density;
        let qg = self.cfg.gyro_density * self.cfg.gyro_density;
        let mut q_proc = SMatrix::<f64, 9, 9>::zeros();
        for i in 0..3 {
            q_proc[(i, i)] = qa * dt * dt * dt / 3.0;
            q_proc[(3 + i, 3 + i)] = qa * dt;
            q_proc[(6 + i, 6 + i)] = qg * dt;
        }

        self.state.covariance = f * self.state.covariance * f.transpose() + q_proc;
        symmetrize9(&mut self.state.covariance);
        Ok(())
    }

    fn correct_block(
        &mut self,
        measurement: &Vector3<f64>,
        block: usize,
        sigma: f64,
    ) -> Result<(), EkfError> {
        if !measurement.iter().all(|v| v.is_finite()) {
            return Err(EkfError::NonFiniteMeasurement);
        }
        let p = &self.state.covariance;
        // H = [0 .. I3 .. 0] selecting the block, so H P H^T is a sub-block.
        let p_bb: Matrix3<f64> = p.fixed_view::<3, 3>(block, block).into();
        let innovation_cov = p_bb + Matrix3::identity() * (sigma * sigma);
        let chol = innovation_cov
            .cholesky()
            .ok_or(EkfError::DegenerateInnovation)?;
        let s_inv = chol.inverse();

        let p_cols: SMatrix<f64, 9, 3> = p.fixed_view::<9, 3>(0, block).into();
        let gain = p_cols * s_inv;

        let predicted = match block {
            0 => self.state.position,
            3 => self.state.velocity,
            _ => self.state.orientation,
        };
        let innovation = measurement - predicted;
        let delta = gain * innovation;

        self.state.position += delta.fixed_rows::<3>(0);
        self.state.velocity += delta.fixed_rows::<3>(3);
        self.state.orientation += delta.fixed_rows::<3>(6);
        self.state.orientation.z = wrap_angle(self.state.orientation.z);

        // P <- (I - K H) P, with K H expanded over the selected columns.
        let mut kh = SMatrix::<f64, 9, 9>::zeros();
        kh.fixed_view_mut::<9, 3>(0, block).copy_from(&gain);
        self.state.covariance =
            (SMatrix::<f64, 9, 9>::identity() - kh) * self.state.covariance;
        symmetrize9(&mut self.state.covariance);
        self.last_innovation = Some(innovation);
        Ok(())
    }

    /// EKF update against a GPS fix already projected to local metric
    /// coordinates (x, y, z).
    pub fn correct_gps(&mut self, gps_local: &Vector3<f64>) -> Result<(), EkfError> {
        self.correct_block(gps_local, 0, self.cfg.gps_sigma)
    }

    /// EKF update against a world-frame velocity measurement.
    pub fn correct_velocity(&mut self, vel: &Vector3<f64>) -> Result<(), EkfError> {
        self.correct_block(vel, 3, self.cfg.velocity_sigma)
    }

    /// Current belief as a 6D pose: position plus orientation quaternion and
    /// the matching 6x6 covariance block.
    pub fn pose(&self) -> Pose6D {
        pose_of(&self.state)
    }
}

/// Extracts a 6D pose from the 9-state belief.
pub fn pose_of(state: &EgoState) -> Pose6D {
    let picks = [0usize, 1, 2, 6, 7, 8];
    let mut cov = SMatrix::<f64, 6, 6>::zeros();
    for (r, &pr) in picks.iter().enumerate() {
        for (c, &pc) in picks.iter().enumerate() {
            cov[(r, c)] = state.covariance[(pr, pc)];
        }
    }
    Pose6D {
        position: state.position,
        orientation: state.quaternion(),
        covariance: cov,
    }
}
