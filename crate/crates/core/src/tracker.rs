//! Track lifecycle and motion estimation: per-object constant-velocity EKF,
//! confidence decay on misses, new-track initiation, the log-odds voxel map,
//! and periodic super frames of high-confidence tracks.

use crate::descriptor::VfhDescriptor;
use crate::pose_ekf::wrap_angle;
use crate::segmentation::{Aabb, ObjectCluster};
use nalgebra::{Matrix3, SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("dt must be positive, got {dt}")]
    InvalidDt { dt: f64 },
    #[error("innovation covariance is numerically singular")]
    DegenerateUpdate,
    #[error("config violates {what}")]
    InvalidConfig { what: &'static str },
}

/// Stable track identity; never reused within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrackId(pub u64);

/// Monotonic id source.
#[derive(Debug, Default)]
pub struct TrackIdGen {
    next: u64,
}

impl TrackIdGen {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn allocate(&mut self) -> TrackId {
        let id = TrackId(self.next);
        self.next += 1;
        id
    }
}

/// Per-object filter tuning.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionConfig {
    /// Position process noise, m^2 per second.
    pub process_position: f64,
    /// Velocity process noise, (m/s)^2 per second.
    pub process_velocity: f64,
    /// Heading process noise, rad^2 per second.
    pub process_heading: f64,
    /// Centroid measurement sigma, meters.
    pub measurement_sigma: f64,
    pub initial_position_var: f64,
    pub initial_velocity_var: f64,
    pub initial_heading_var: f64,
    /// Below this speed the heading is held rather than re-derived.
    pub heading_speed_floor: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            process_position: 0.01,
            process_velocity: 0.5,
            process_heading: 0.1,
            measurement_sigma: 0.1,
            initial_position_var: 0.25,
            initial_velocity_var: 4.0,
            initial_heading_var: 1.0,
            heading_speed_floor: 0.1,
        }
    }
}

/// Confidence decay parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct DecayConfig {
    pub decay_lambda: f64,
    pub match_gain: f64,
    pub initial_confidence: f64,
    pub discard_threshold: f64,
    pub high_confidence: f64,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self {
            decay_lambda: 0.7,
            match_gain: 0.15,
            initial_confidence: 0.5,
            discard_threshold: 0.2,
            high_confidence: 0.8,
        }
    }
}

impl DecayConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        if !(self.decay_lambda > 0.0 && self.decay_lambda < 1.0) {
            return Err(TrackerError::InvalidConfig {
                what: "decay_lambda must lie in (0, 1)",
            });
        }
        if !(self.discard_threshold > 0.0
            && self.discard_threshold < self.initial_confidence
            && self.initial_confidence <= 1.0)
        {
            return Err(TrackerError::InvalidConfig {
                what: "0 < discard_threshold < initial_confidence <= 1",
            });
        }
        Ok(())
    }
}

/// Derived kinematics reported alongside the state: speed, tangential and
/// normal acceleration, and total acceleration magnitude. The identity
/// a_n^2 + a_t^2 = a_total^2 holds by construction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MotionDiagnostics {
    pub speed: f64,
    pub accel_tangential: f64,
    pub accel_normal: f64,
    pub accel_total: f64,
}

/// Object motion belief over (X, Y, Z, V_x, V_y, theta).
#[derive(Debug, Clone, PartialEq)]
pub struct MotionState {
    pub position: Vector3<f64>,
    pub velocity: Vector2<f64>,
    /// Heading in radians, wrapped to (-pi, pi].
    pub heading: f64,
    pub covariance: SMatrix<f64, 6, 6>,
    pub diagnostics: MotionDiagnostics,
}

impl MotionState {
    pub fn at_rest(position: Vector3<f64>, cfg: &MotionConfig) -> Self {
        let mut covariance = SMatrix::zeros();
        for i in 0..3 {
            covariance[(i, i)] = cfg.initial_position_var;
        }
        covariance[(3, 3)] = cfg.initial_velocity_var;
        covariance[(4, 4)] = cfg.initial_velocity_var;
        covariance[(5, 5)] = cfg.initial_heading_var;
        Self {
            position,
            velocity: Vector2::zeros(),
            heading: 0.0,
            covariance,
            diagnostics: MotionDiagnostics::default(),
        }
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    /// The 3x3 position block of the covariance.
    pub fn position_covariance(&self) -> Matrix3<f64> {
        self.covariance.fixed_view::<3, 3>(0, 0).into()
    }
}

fn symmetrize6(m: &mut SMatrix<f64, 6, 6>) {
    *m = (*m + m.transpose()) * 0.5;
}

/// Constant-velocity prediction: x and y advance by velocity, z holds, and
/// process noise inflates the covariance.
pub fn predict_motion(
    state: &MotionState,
    cfg: &MotionConfig,
    dt: f64,
) -> Result<MotionState, TrackerError> {
    if !dt.is_finite() || dt <= 0.0 {
        return Err(TrackerError::InvalidDt { dt });
    }
    let mut next = state.clone();
    next.position.x += state.velocity.x * dt;
    next.position.y += state.velocity.y * dt;

    let mut f = SMatrix::<f64, 6, 6>::identity();
    f[(0, 3)] = dt;
    f[(1, 4)] = dt;
    let mut q = SMatrix::<f64, 6, 6>::zeros();
    for i in 0..3 {
        q[(i, i)] = cfg.process_position * dt;
    }
    q[(3, 3)] = cfg.process_velocity * dt;
    q[(4, 4)] = cfg.process_velocity * dt;
    q[(5, 5)] = cfg.process_heading * dt;
    next.covariance = f * state.covariance * f.transpose() + q;
    symmetrize6(&mut next.covariance);
    Ok(next)
}

/// EKF update against a matched centroid. Velocity is re-estimated through
/// the filter, the heading follows the velocity direction once the object is
/// actually moving, and the acceleration diagnostics are refreshed from the
/// velocity change over this step.
pub fn update_motion(
    state: &MotionState,
    centroid: &Vector3<f64>,
    cfg: &MotionConfig,
    dt: f64,
) -> Result<(MotionState, Vector3<f64>), TrackerError> {
    let predicted = predict_motion(state, cfg, dt)?;
    let velocity_before = state.velocity;
    let speed_before = velocity_before.norm();

    let p = &predicted.covariance;
    let p_pos: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into();
    let innovation_cov =
        p_pos + Matrix3::identity() * (cfg.measurement_sigma * cfg.measurement_sigma);
    let chol = innovation_cov
        .cholesky()
        .ok_or(TrackerError::DegenerateUpdate)?;
    let s_inv = chol.inverse();
    let p_cols: SMatrix<f64, 6, 3> = p.fixed_view::<6, 3>(0, 0).into();
    let gain = p_cols * s_inv;

    let innovation = centroid - predicted.position;
    let delta = gain * innovation;

    let mut next = predicted;
    next.position += delta.fixed_rows::<3>(0);
    next.velocity.x += delta[3];
    next.velocity.y += delta[4];
    next.heading = wrap_angle(next.heading + delta[5]);

    let mut kh = SMatrix::<f64, 6, 6>::zeros();
    kh.fixed_view_mut::<6, 3>(0, 0).copy_from(&gain);
    next.covariance = (SMatrix::<f64, 6, 6>::identity() - kh) * next.covariance;
    symmetrize6(&mut next.covariance);

    let speed_after = next.velocity.norm();
    if speed_after > cfg.heading_speed_floor {
        next.heading = next.velocity.y.atan2(next.velocity.x);
    }

    let accel_vec = (next.velocity - velocity_before) / dt;
    let accel_tangential = (speed_after - speed_before) / dt;
    let raw_sq = accel_vec.norm_squared();
    let accel_normal = (raw_sq - accel_tangential * accel_tangential).max(0.0).sqrt();
    next.diagnostics = MotionDiagnostics {
        speed: speed_after,
        accel_tangential,
        accel_normal,
        accel_total: accel_tangential.hypot(accel_normal),
    };

    Ok((next, innovation))
}

/// Gaussian log-density of a candidate centroid under the predicted position
/// and its covariance block.
pub fn position_log_density(predicted: &MotionState, candidate: &Vector3<f64>) -> Option<f64> {
    let cov = predicted.position_covariance();
    let chol = cov.cholesky()?;
    let diff = candidate - predicted.position;
    let maha_sq = diff.dot(&chol.solve(&diff));
    let log_det = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    Some(-0.5 * (3.0 * (2.0 * std::f64::consts::PI).ln() + log_det + maha_sq))
}

/// A persistent object identity.
#[derive(Debug, Clone)]
pub struct Track {
    pub id: TrackId,
    pub motion: MotionState,
    pub descriptor: VfhDescriptor,
    pub confidence: f64,
    /// Frames since initiation, counting the initiation frame.
    pub age: u64,
    pub frames_since_match: u64,
    /// Matched centroids, oldest first; the initiation centroid is first.
    pub history: Vec<Vector3<f64>>,
    pub last_aabb: Aabb,
    pub last_innovation: Vector3<f64>,
}

impl Track {
    /// Likelihood of the candidate centroid under the motion prediction.
    /// Unavailable until the track has three frames of history.
    pub fn motion_log_likelihood(
        &self,
        candidate: &Vector3<f64>,
        cfg: &MotionConfig,
        dt: f64,
        min_frames: u64,
    ) -> Option<f64> {
        if self.age < min_frames {
            return None;
        }
        let predicted = predict_motion(&self.motion, cfg, dt).ok()?;
        position_log_density(&predicted, candidate)
    }
}

/// Starts a track on a freshly segmented cluster: position at the centroid,
/// zero velocity, zero heading, initial confidence from config.
pub fn init_track(
    cluster: &ObjectCluster,
    descriptor: VfhDescriptor,
    motion_cfg: &MotionConfig,
    decay_cfg: &DecayConfig,
    ids: &mut TrackIdGen,
) -> Track {
    Track {
        id: ids.allocate(),
        motion: MotionState::at_rest(cluster.centroid, motion_cfg),
        descriptor,
        confidence: decay_cfg.initial_confidence,
        age: 1,
        frames_since_match: 0,
        history: vec![cluster.centroid],
        last_aabb: cluster.aabb,
        last_innovation: Vector3::zeros(),
    }
}

/// Geometric confidence decay: a match adds `match_gain` (clamped at 1), a
/// miss multiplies by `decay_lambda`.
pub fn apply_decay(track: &mut Track, matched: bool, cfg: &DecayConfig) {
    if matched {
        track.confidence = (track.confidence + cfg.match_gain).min(1.0);
        track.frames_since_match = 0;
    } else {
        track.confidence *= cfg.decay_lambda;
        track.frames_since_match += 1;
    }
}

/// Splits tracks into survivors and the ones whose confidence fell strictly
/// below the discard threshold.
pub fn prune(tracks: Vec<Track>, cfg: &DecayConfig) -> (Vec<Track>, Vec<Track>) {
    tracks
        .into_iter()
        .partition(|t| t.confidence >= cfg.discard_threshold)
}

impl Track {
    /// Commits a matched observation: EKF update, descriptor refresh,
    /// confidence gain.
    pub fn record_match(
        &mut self,
        cluster: &ObjectCluster,
        descriptor: VfhDescriptor,
        motion_cfg: &MotionConfig,
        decay_cfg: &DecayConfig,
        dt: f64,
    ) -> Result<(), TrackerError> {
        let (motion, innovation) = update_motion(&self.motion, &cluster.centroid, motion_cfg, dt)?;
        self.motion = motion;
        self.last_innovation = innovation;
        self.descriptor = descriptor;
        self.last_aabb = cluster.aabb;
        self.history.push(cluster.centroid);
        self.age += 1;
        apply_decay(self, true, decay_cfg);
        Ok(())
    }

    /// Coasts through a missed frame: prediction only, confidence decay.
    pub fn record_miss(
        &mut self,
        motion_cfg: &MotionConfig,
        decay_cfg: &DecayConfig,
        dt: f64,
    ) -> Result<(), TrackerError> {
        self.motion = predict_motion(&self.motion, motion_cfg, dt)?;
        self.age += 1;
        apply_decay(self, false, decay_cfg);
        Ok(())
    }
}

/// Occupancy map parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct OccupancyConfig {
    pub voxel_leaf: f64,
    pub log_odds_hit: f64,
    pub log_odds_miss: f64,
    /// Emit a super frame every this many frames.
    pub superframe_period: u64,
    /// Decrement voxels along ego-to-point rays. Off by default.
    pub carve_free: bool,
}

impl Default for OccupancyConfig {
    fn default() -> Self {
        Self {
            voxel_leaf: 0.2,
            log_odds_hit: 0.85,
            log_odds_miss: -0.4,
            superframe_period: 10,
            carve_free: false,
        }
    }
}

/// Log-odds clamp bound.
pub const LOG_ODDS_CLAMP: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelCell {
    pub log_odds: f64,
    pub last_update: u64,
}

/// Fixed-resolution voxel grid of log-odds occupancy.
#[derive(Debug, Clone)]
pub struct OccupancyMap {
    leaf: f64,
    cells: HashMap<(i64, i64, i64), VoxelCell>,
}

impl OccupancyMap {
    pub fn new(leaf: f64) -> Self {
        Self {
            leaf,
            cells: HashMap::new(),
        }
    }

    pub fn leaf(&self) -> f64 {
        self.leaf
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn voxel_index(&self, p: &Vector3<f64>) -> (i64, i64, i64) {
        (
            (p.x / self.leaf).floor() as i64,
            (p.y / self.leaf).floor() as i64,
            (p.z / self.leaf).floor() as i64,
        )
    }

    pub fn cell(&self, index: (i64, i64, i64)) -> Option<&VoxelCell> {
        self.cells.get(&index)
    }

    fn add(&mut self, index: (i64, i64, i64), delta: f64, frame: u64) {
        let cell = self.cells.entry(index).or_insert(VoxelCell {
            log_odds: 0.0,
            last_update: frame,
        });
        cell.log_odds = (cell.log_odds + delta).clamp(-LOG_ODDS_CLAMP, LOG_ODDS_CLAMP);
        cell.last_update = frame;
    }

    /// Registers one frame of world-frame object points. Each voxel hit this
    /// frame receives a single `log_odds_hit` increment regardless of how
    /// many points fall into it. With `carve_free`, voxels crossed by the
    /// ego-to-point rays are decremented instead.
    pub fn update(
        &mut self,
        points: impl IntoIterator<Item = Vector3<f64>>,
        ego: &Vector3<f64>,
        frame: u64,
        cfg: &OccupancyConfig,
    ) {
        let mut hit: Vec<(i64, i64, i64)> = Vec::new();
        let mut seen: HashSet<(i64, i64, i64)> = HashSet::new();
        let mut free: HashSet<(i64, i64, i64)> = HashSet::new();
        for p in points {
            let idx = self.voxel_index(&p);
            if seen.insert(idx) {
                hit.push(idx);
            }
            if cfg.carve_free {
                for crossed in self.traverse(ego, &p) {
                    free.insert(crossed);
                }
            }
        }
        if cfg.carve_free {
            let mut free: Vec<_> = free.difference(&seen).copied().collect();
            free.sort_unstable();
            for idx in free {
                self.add(idx, cfg.log_odds_miss, frame);
            }
        }
        for idx in hit {
            self.add(idx, cfg.log_odds_hit, frame);
        }
    }

    /// Voxels strictly between the ego voxel and the endpoint voxel along the
    /// ray, via incremental grid traversal.
    fn traverse(&self, from: &Vector3<f64>, to: &Vector3<f64>) -> Vec<(i64, i64, i64)> {
        let (sx, sy, sz) = self.voxel_index(from);
        let (ex, ey, ez) = self.voxel_index(to);
        let mut current = [sx, sy, sz];
        let end = [ex, ey, ez];
        let dir = to - from;
        let step = [
            if dir.x > 0.0 { 1i64 } else { -1 },
            if dir.y > 0.0 { 1i64 } else { -1 },
            if dir.z > 0.0 { 1i64 } else { -1 },
        ];
        let next_boundary = |i: i64, s: i64| -> f64 {
            let edge = if s > 0 { i + 1 } else { i };
            edge as f64 * self.leaf
        };
        let mut t_max = [0.0f64; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for k in 0..3 {
            let d = dir[k];
            if d.abs() < 1e-12 {
                t_max[k] = f64::INFINITY;
            } else {
                t_max[k] = (next_boundary(current[k], step[k]) - from[k]) / d;
                t_delta[k] = self.leaf / d.abs();
            }
        }
        let mut out = Vec::new();
        let mut guard = 0;
        while current != end && guard < 100_000 {
            guard += 1;
            let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
                0
            } else if t_max[1] <= t_max[2] {
                1
            } else {
                2
            };
            current[axis] += step[axis];
            t_max[axis] += t_delta[axis];
            if current != end {
                out.push((current[0], current[1], current[2]));
            }
        }
        out
    }
}

/// Whether a super frame is due at this 1-based frame number.
pub fn superframe_due(frame_number: u64, period: u64) -> bool {
    period > 0 && frame_number.is_multiple_of(period)
}

/// Snapshot of one high-confidence track inside a super frame.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SuperFrameEntry {
    pub id: u64,
    pub centroid: [f64; 3],
    pub velocity: [f64; 2],
    pub confidence: f64,
    pub aabb: Aabb,
}

/// Periodic snapshot of every track at or above the high-confidence bar.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SuperFrame {
    pub frame: u64,
    pub tracks: Vec<SuperFrameEntry>,
}

/// Collects the tracks with confidence >= `high_confidence` into a super
/// frame for serialization. An empty snapshot is still a valid super frame.
pub fn emit_superframe(tracks: &[Track], frame_number: u64, cfg: &DecayConfig) -> SuperFrame {
    let mut entries: Vec<SuperFrameEntry> = tracks
        .iter()
        .filter(|t| t.confidence >= cfg.high_confidence)
        .map(|t| SuperFrameEntry {
            id: t.id.0,
            centroid: [t.motion.position.x, t.motion.position.y, t.motion.position.z],
            velocity: [t.motion.velocity.x, t.motion.velocity.y],
            confidence: t.confidence,
            aabb: t.last_aabb,
        })
        .collect();
    entries.sort_by_key(|e| e.id);
    SuperFrame {
        frame: frame_number,
        tracks: entries,
    }
}
