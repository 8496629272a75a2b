//! End-to-end pipeline runner plus the evaluation and timing harness.
//!
//! Per frame: read sensor input, update the ego pose, filter the cloud,
//! strip the ground plane, transform to world, cluster, compute descriptors,
//! associate against live tracks, update track state and confidence, fold the
//! frame into the occupancy map, and emit super frames on schedule. A run is
//! bit-reproducible given the same inputs, config, and seed.

mod materialize;
mod metrics;

pub use materialize::{dbscan_scaling_probe, materialize_scenario};
pub use metrics::{report_timings, score_accuracy, AccuracyReport, FrameTimings, TimingReport};

use crate::association::{associate_frame, AssociationConfig, ClusterObservation, TraceEntry};
use crate::descriptor::{compute_vfh, estimate_normals};
use crate::geometry::Pose6D;
use crate::ingest::{
    gps_to_local, FrameSource, GpsFix, GroundTruthFrame, IngestError, KittiReader, SensorFrame,
    SyntheticScenario, SyntheticStream,
};
use crate::pose_ekf::{EgoEkf, EgoState, EkfConfig, EkfError};
use crate::preprocess::{filter_cloud, remove_ground, to_world, FilterConfig, RansacConfig};
use crate::segmentation::{segment_clusters, DbscanConfig, ObjectCluster};
use crate::tracker::{
    emit_superframe, init_track, predict_motion, prune, superframe_due, DecayConfig, MotionConfig,
    MotionState, OccupancyConfig, OccupancyMap, Track, TrackIdGen,
};
use nalgebra::{SMatrix, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(#[from] IngestError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("frame {index}: {message}")]
    Frame { index: u64, message: String },
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("no frames to report on")]
    NoFrames,
}

impl PipelineError {
    /// Process exit code: 1 for input/config problems, 2 for runtime aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Input(_) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Where frames come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SourceConfig {
    /// A KITTI raw drive directory.
    Kitti { path: PathBuf },
    /// A synthetic scenario file.
    Synthetic { path: PathBuf },
}

/// Ego pose source: the full EKF, or nav records taken at face value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseMode {
    Ekf,
    Passthrough,
}

/// Descriptor-stage knobs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct DescriptorConfig {
    /// Neighbors per normal estimate.
    pub normal_k: usize,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self { normal_k: 10 }
    }
}

/// Full pipeline configuration. Every module's parameters with defaults; the
/// `rng_seed` seeds both RANSAC and (for synthetic sources) the scene
/// generator, so one value pins the whole run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub source: SourceConfig,
    #[serde(default = "default_pose_mode")]
    pub pose_mode: PoseMode,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub rng_seed: u64,
    /// Process at most this many frames; absent means all.
    #[serde(default)]
    pub frames: Option<u64>,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub ransac: RansacConfig,
    #[serde(default)]
    pub dbscan: DbscanConfig,
    #[serde(default)]
    pub ekf: EkfConfig,
    #[serde(default)]
    pub descriptor: DescriptorConfig,
    #[serde(default)]
    pub association: AssociationConfig,
    #[serde(default)]
    pub decay: DecayConfig,
    #[serde(default)]
    pub motion: MotionConfig,
    #[serde(default)]
    pub occupancy: OccupancyConfig,
    /// Write per-cluster descriptor bins to descriptors.log.
    #[serde(default)]
    pub dump_descriptors: bool,
    /// Write the per-frame association trace to association.log.
    #[serde(default)]
    pub dump_association: bool,
}

fn default_pose_mode() -> PoseMode {
    PoseMode::Ekf
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    pub fn for_synthetic(path: impl Into<PathBuf>) -> Self {
        Self {
            source: SourceConfig::Synthetic { path: path.into() },
            pose_mode: default_pose_mode(),
            output_dir: default_output_dir(),
            rng_seed: 0,
            frames: None,
            filter: FilterConfig::default(),
            ransac: RansacConfig::default(),
            dbscan: DbscanConfig::default(),
            ekf: EkfConfig::default(),
            descriptor: DescriptorConfig::default(),
            association: AssociationConfig::default(),
            decay: DecayConfig::default(),
            motion: MotionConfig::default(),
            occupancy: OccupancyConfig::default(),
            dump_descriptors: false,
            dump_association: false,
        }
    }

    /// Loads a TOML config; the source path is resolved relative to the
    /// config file's directory, and both are checked to exist.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            PipelineError::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let source_path = match &mut cfg.source {
            SourceConfig::Kitti { path } | SourceConfig::Synthetic { path } => {
                if path.is_relative() {
                    *path = base.join(&path);
                }
                path.clone()
            }
        };
        if !source_path.exists() {
            return Err(PipelineError::Config(format!(
                "source path {} does not exist",
                source_path.display()
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every stage's declared parameter invariants.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |what: &str| Err(PipelineError::Config(what.to_string()));
        if !(0.0 <= self.filter.min_range && self.filter.min_range < self.filter.max_range) {
            return bad("filter: requires 0 <= min_range < max_range");
        }
        if self.ransac.distance_threshold <= 0.0 {
            return bad("ransac: distance_threshold must be positive");
        }
        if self.ransac.max_iterations == 0 {
            return bad("ransac: max_iterations must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.ransac.min_inlier_fraction) {
            return bad("ransac: min_inlier_fraction must lie in [0, 1]");
        }
        if self.dbscan.eps <= 0.0 {
            return bad("dbscan: eps must be positive");
        }
        if self.dbscan.min_pts == 0 {
            return bad("dbscan: min_pts must be at least 1");
        }
        if self.descriptor.normal_k < 3 {
            return bad("descriptor: normal_k must be at least 3");
        }
        if !(self.association.chi2_gate > 0.0 && self.association.chi2_gate <= 2.0) {
            return bad("association: chi2_gate must lie in (0, 2]");
        }
        if self.association.mdt_tie_epsilon < 0.0 {
            return bad("association: mdt_tie_epsilon must be non-negative");
        }
        if self.occupancy.voxel_leaf <= 0.0 {
            return bad("occupancy: voxel_leaf must be positive");
        }
        self.ekf
            .validate()
            .map_err(|e| PipelineError::Config(format!("ekf: {e}")))?;
        self.decay
            .validate()
            .map_err(|e| PipelineError::Config(format!("decay: {e}")))?;
        Ok(())
    }
}

/// One line of tracks.log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackRecord {
    pub frame: u64,
    pub id: u64,
    pub position: Vector3<f64>,
    pub velocity: Vector2<f64>,
    pub heading: f64,
    pub confidence: f64,
    /// True when the track was observed (matched or initiated) this frame.
    pub matched: bool,
}

impl TrackRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{} {} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {}",
            self.frame,
            self.id,
            self.position.x,
            self.position.y,
            self.position.z,
            self.velocity.x,
            self.velocity.y,
            self.heading,
            self.confidence,
            u8::from(self.matched),
        )
    }

    pub fn parse_line(line: &str, line_no: usize) -> Result<Self, PipelineError> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 10 {
            return Err(PipelineError::Config(format!(
                "tracks.log:{line_no}: expected 10 fields, got {}",
                fields.len()
            )));
        }
        let num = |i: usize| -> Result<f64, PipelineError> {
            fields[i].parse().map_err(|_| {
                PipelineError::Config(format!("tracks.log:{line_no}: bad number '{}'", fields[i]))
            })
        };
        Ok(Self {
            frame: num(0)? as u64,
            id: num(1)? as u64,
            position: Vector3::new(num(2)?, num(3)?, num(4)?),
            velocity: Vector2::new(num(5)?, num(6)?),
            heading: num(7)?,
            confidence: num(8)?,
            matched: num(9)? != 0.0,
        })
    }
}

/// Reads a tracks.log written by [`run_pipeline`].
pub fn read_track_log(path: &Path) -> Result<Vec<TrackRecord>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| TrackRecord::parse_line(l, i + 1))
        .collect()
}

/// Reads a ground_truth.jsonl written by a run or by `gen`.
pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthFrame>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| PipelineError::Config(format!("ground truth: {e}")))
        })
        .collect()
}

/// A discarded track, kept for the run report.
#[derive(Debug, Clone)]
pub struct DiscardEvent {
    pub frame: u64,
    pub id: u64,
    pub confidence: f64,
}

/// Everything a run produced, beyond the files on disk.
#[derive(Debug)]
pub struct RunSummary {
    pub frames: u64,
    pub tracks_created: u64,
    pub records: Vec<TrackRecord>,
    pub ground_truth: Vec<GroundTruthFrame>,
    pub timings: Vec<FrameTimings>,
    pub timing_report: TimingReport,
    pub accuracy: Option<AccuracyReport>,
    pub discards: Vec<DiscardEvent>,
    pub superframes_written: usize,
    pub output_dir: PathBuf,
}

fn open_source(cfg: &PipelineConfig) -> Result<Box<dyn FrameSource>, PipelineError> {
    match &cfg.source {
        SourceConfig::Kitti { path } => Ok(Box::new(KittiReader::open(path)?)),
        SourceConfig::Synthetic { path } => {
            let mut scenario = SyntheticScenario::load(path)?;
            scenario.rng_seed = cfg.rng_seed;
            Ok(Box::new(SyntheticStream::new(scenario)))
        }
    }
}

struct PoseTracker {
    mode: PoseMode,
    ekf: Option<EgoEkf>,
    origin: Option<GpsFix>,
    cfg: EkfConfig,
}

impl PoseTracker {
    fn new(mode: PoseMode, cfg: EkfConfig) -> Self {
        Self {
            mode,
            ekf: None,
            origin: None,
            cfg,
        }
    }

    /// Local metric position of this frame's GPS fix.
    fn local_fix(&mut self, gps: &GpsFix) -> Vector3<f64> {
        let origin = *self.origin.get_or_insert(*gps);
        let (x, y) = gps_to_local(gps, &origin);
        Vector3::new(x, y, gps.alt - origin.alt)
    }

    fn update(&mut self, frame: &SensorFrame, dt: Option<f64>) -> Result<Pose6D, EkfError> {
        let fix = self.local_fix(&frame.gps);
        match self.mode {
            PoseMode::Passthrough => Ok(Pose6D {
                position: fix,
                orientation: UnitQuaternion::from_euler_angles(
                    frame.rpy.x,
                    frame.rpy.y,
                    frame.rpy.z,
                ),
                covariance: SMatrix::zeros(),
            }),
            PoseMode::Ekf => match self.ekf.as_mut() {
                Some(ekf) => {
                    if let Some(dt) = dt {
                        ekf.predict(&frame.imu, dt)?;
                    }
                    ekf.correct_gps(&fix)?;
                    match ekf.correct_velocity(&frame.velocity) {
                        Ok(()) => {}
                        Err(EkfError::NonFiniteMeasurement) => {
                            eprintln!("velocity measurement rejected (non-finite)");
                        }
                        Err(e) => return Err(e),
                    }
                    Ok(ekf.pose())
                }
                None => {
                    // First frame: seed the belief from the nav records.
                    let mut state: EgoState = EgoEkf::new(self.cfg)?.state().clone();
                    state.position = fix;
                    state.velocity = frame.velocity;
                    state.orientation = frame.rpy;
                    let ekf = EgoEkf::with_state(self.cfg, state)?;
                    let pose = ekf.pose();
                    self.ekf = Some(ekf);
                    Ok(pose)
                }
            },
        }
    }
}

struct LogSink {
    tracks: std::io::BufWriter<std::fs::File>,
    pose: std::io::BufWriter<std::fs::File>,
    timings: std::io::BufWriter<std::fs::File>,
    descriptors: Option<std::io::BufWriter<std::fs::File>>,
    association: Option<std::io::BufWriter<std::fs::File>>,
}

fn create_log(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, PipelineError> {
    Ok(std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| io_err(path, e))?,
    ))
}

impl LogSink {
    fn open(out: &Path, cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        Ok(Self {
            tracks: create_log(&out.join("tracks.log"))?,
            pose: create_log(&out.join("pose.log"))?,
            timings: create_log(&out.join("timings.log"))?,
            descriptors: cfg
                .dump_descriptors
                .then(|| create_log(&out.join("descriptors.log")))
                .transpose()?,
            association: cfg
                .dump_association
                .then(|| create_log(&out.join("association.log")))
                .transpose()?,
        })
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.tracks.flush()?;
        self.pose.flush()?;
        self.timings.flush()?;
        if let Some(w) = &mut self.descriptors {
            w.flush()?;
        }
        if let Some(w) = &mut self.association {
            w.flush()?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    frame: u64,
    track: u64,
    chosen: Option<usize>,
    tie_break: crate::association::TieBreak,
    candidates: Vec<TraceCandidate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<&'a str>,
}

#[derive(Serialize)]
struct TraceCandidate {
    cluster: usize,
    chi2: f64,
    mdt: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    loglik: Option<f64>,
}

fn trace_record(frame: u64, entry: &TraceEntry) -> TraceRecord<'static> {
    TraceRecord {
        frame,
        track: entry.track.0,
        chosen: entry.chosen,
        tie_break: entry.tie_break,
        candidates: entry
            .candidates
            .iter()
            .map(|c| TraceCandidate {
                cluster: c.cluster,
                chi2: c.chi2,
                mdt: c.mdt,
                loglik: c.motion_log_likelihood,
            })
            .collect(),
        note: None,
    }
}

/// Runs the pipeline described by the config, writing all artifacts under
/// `output_dir`: `tracks.log`, `pose.log`, `timings.log`, `superframes/`,
/// plus `ground_truth.jsonl` and `accuracy.log` when the source provides
/// ground truth.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunSummary, PipelineError> {
    let source = open_source(cfg)?;
    run_pipeline_with_source(cfg, source)
}

/// Same as [`run_pipeline`] but over an already-open frame source.
pub fn run_pipeline_with_source(
    cfg: &PipelineConfig,
    mut source: Box<dyn FrameSource>,
) -> Result<RunSummary, PipelineError> {
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(out.join("superframes")).map_err(|e| io_err(&out, e))?;
    let mut logs = LogSink::open(&out, cfg)?;

    let mut ransac_cfg = cfg.ransac;
    ransac_cfg.rng_seed = cfg.rng_seed;

    let mut pose_tracker = PoseTracker::new(cfg.pose_mode, cfg.ekf);
    let mut tracks: Vec<Track> = Vec::new();
    let mut ids = TrackIdGen::new();
    let mut map = OccupancyMap::new(cfg.occupancy.voxel_leaf);
    let mut timings: Vec<FrameTimings> = Vec::new();
    let mut records: Vec<TrackRecord> = Vec::new();
    let mut truths: Vec<GroundTruthFrame> = Vec::new();
    let mut discards: Vec<DiscardEvent> = Vec::new();
    let mut superframes_written = 0usize;
    let mut tracks_created = 0u64;

    let mut frame_index: u64 = 0;
    let mut last_timestamp: Option<f64> = None;

    loop {
        if let Some(limit) = cfg.frames {
            if frame_index >= limit {
                break;
            }
        }
        let next = source.next_frame().map_err(|e| PipelineError::Frame {
            index: frame_index,
            message: e.to_string(),
        })?;
        let Some((frame, truth)) = next else {
            break;
        };

        let frame_err = |message: String| PipelineError::Frame {
            index: frame_index,
            message,
        };

        let total_start = std::time::Instant::now();
        let dt = last_timestamp.map(|t| frame.timestamp - t);
        if let Some(dt) = dt {
            if dt <= 0.0 {
                return Err(frame_err(format!("non-increasing timestamp (dt={dt})")));
            }
        }
        last_timestamp = Some(frame.timestamp);

        // Pose stage.
        let pose_start = std::time::Instant::now();
        let pose = pose_tracker
            .update(&frame, dt)
            .map_err(|e| frame_err(format!("pose update failed: {e}")))?;
        let pose_ms = pose_start.elapsed().as_secs_f64() * 1e3;
        let (roll, pitch, yaw) = pose.orientation.euler_angles();
        writeln!(
            logs.pose,
            "{:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
            frame.timestamp, pose.position.x, pose.position.y, pose.position.z, roll, pitch, yaw
        )
        .map_err(|e| io_err(&out, e))?;

        // Filtering stage: range/voxel filter plus ground removal.
        let filter_start = std::time::Instant::now();
        let filtered = filter_cloud(&frame.cloud, &cfg.filter);
        let nonground = if filtered.len() >= 3 {
            remove_ground(&filtered, &ransac_cfg)
                .map_err(|e| frame_err(format!("ground removal failed: {e}")))?
                .nonground
        } else {
            filtered
        };
        let filtering_ms = filter_start.elapsed().as_secs_f64() * 1e3;

        // Transform stage.
        let transform_start = std::time::Instant::now();
        let world = to_world(&nonground, &pose);
        let transform_ms = transform_start.elapsed().as_secs_f64() * 1e3;

        // Clustering stage.
        let cluster_start = std::time::Instant::now();
        let clusters: Vec<ObjectCluster> = segment_clusters(&world, &cfg.dbscan)
            .into_iter()
            .filter(|c| c.len() >= 3)
            .collect();
        let clustering_ms = cluster_start.elapsed().as_secs_f64() * 1e3;

        // Descriptor + association stage.
        let assoc_start = std::time::Instant::now();
        let viewpoint = pose.position;
        let observations: Vec<ClusterObservation> = clusters
            .iter()
            .map(|cluster| {
                let points: Vec<Vector3<f64>> = cluster
                    .point_indices
                    .iter()
                    .map(|&i| world.points[i].position())
                    .collect();
                let normals = estimate_normals(&points, cfg.descriptor.normal_k, &viewpoint);
                let descriptor = compute_vfh(&points, &normals, &viewpoint)
                    .map_err(|e| frame_err(format!("descriptor failed: {e}")))?;
                Ok(ClusterObservation {
                    cluster: cluster.clone(),
                    descriptor,
                })
            })
            .collect::<Result<_, PipelineError>>()?;

        if let (Some(w), true) = (&mut logs.descriptors, cfg.dump_descriptors) {
            for (ci, obs) in observations.iter().enumerate() {
                let bins: Vec<String> = obs
                    .descriptor
                    .pdf()
                    .iter()
                    .map(|b| format!("{b:.9}"))
                    .collect();
                writeln!(w, "{} {} {}", frame_index, ci, bins.join(" "))
                    .map_err(|e| io_err(&out, e))?;
            }
        }

        let step = dt.unwrap_or(0.1);
        let predictions: Vec<MotionState> = tracks
            .iter()
            .map(|t| predict_motion(&t.motion, &cfg.motion, step))
            .collect::<Result<_, _>>()
            .map_err(|e| frame_err(format!("track prediction failed: {e}")))?;
        let result = associate_frame(&tracks, &observations, &predictions, &cfg.association);

        if let (Some(w), true) = (&mut logs.association, cfg.dump_association) {
            for entry in &result.trace {
                let record = trace_record(frame_index, entry);
                let line = serde_json::to_string(&record)
                    .map_err(|e| frame_err(format!("trace serialization failed: {e}")))?;
                writeln!(w, "{line}").map_err(|e| io_err(&out, e))?;
            }
        }

        let mut observed: std::collections::HashMap<u64, usize> = std::collections::HashMap::new();
        for &(track_id, cluster_idx) in &result.matches {
            observed.insert(track_id.0, cluster_idx);
        }
        let mut matched_points: Vec<Vector3<f64>> = Vec::new();
        for track in tracks.iter_mut() {
            match observed.get(&track.id.0) {
                Some(&cluster_idx) => {
                    let obs = &observations[cluster_idx];
                    track
                        .record_match(
                            &obs.cluster,
                            obs.descriptor.clone(),
                            &cfg.motion,
                            &cfg.decay,
                            step,
                        )
                        .map_err(|e| frame_err(format!("track update failed: {e}")))?;
                    matched_points.extend(
                        obs.cluster
                            .point_indices
                            .iter()
                            .map(|&i| world.points[i].position()),
                    );
                }
                None => {
                    track
                        .record_miss(&cfg.motion, &cfg.decay, step)
                        .map_err(|e| frame_err(format!("track coast failed: {e}")))?;
                }
            }
        }
        let mut initiated: std::collections::HashSet<u64> = std::collections::HashSet::new();
        for &cluster_idx in &result.unmatched_clusters {
            let obs = &observations[cluster_idx];
            let track = init_track(
                &obs.cluster,
                obs.descriptor.clone(),
                &cfg.motion,
                &cfg.decay,
                &mut ids,
            );
            initiated.insert(track.id.0);
            tracks_created += 1;
            tracks.push(track);
            matched_points.extend(
                obs.cluster
                    .point_indices
                    .iter()
                    .map(|&i| world.points[i].position()),
            );
        }

        let (kept, dropped) = prune(std::mem::take(&mut tracks), &cfg.decay);
        tracks = kept;
        for track in dropped {
            discards.push(DiscardEvent {
                frame: frame_index,
                id: track.id.0,
                confidence: track.confidence,
            });
        }
        let assoc_ms = assoc_start.elapsed().as_secs_f64() * 1e3;

        // Map + super frame, outside the per-stage timers but inside total.
        map.update(matched_points, &pose.position, frame_index, &cfg.occupancy);
        let frame_number = frame_index + 1;
        if superframe_due(frame_number, cfg.occupancy.superframe_period) {
            let sf = emit_superframe(&tracks, frame_number, &cfg.decay);
            let path = out.join(format!("superframes/sf_{frame_number:06}.json"));
            let json = serde_json::to_string_pretty(&sf)
                .map_err(|e| frame_err(format!("superframe serialization failed: {e}")))?;
            std::fs::write(&path, json).map_err(|e| io_err(&path, e))?;
            superframes_written += 1;
        }

        tracks.sort_by_key(|t| t.id);
        for track in &tracks {
            let record = TrackRecord {
                frame: frame_index,
                id: track.id.0,
                position: track.motion.position,
                velocity: track.motion.velocity,
                heading: track.motion.heading,
                confidence: track.confidence,
                matched: observed.contains_key(&track.id.0) || initiated.contains(&track.id.0),
            };
            writeln!(logs.tracks, "{}", record.to_line()).map_err(|e| io_err(&out, e))?;
            records.push(record);
        }

        let total_ms = total_start.elapsed().as_secs_f64() * 1e3;
        let t = FrameTimings {
            frame: frame_index,
            filtering_ms,
            pose_ms,
            transform_ms,
            clustering_ms,
            association_ms: assoc_ms,
            total_ms,
        };
        writeln!(
            logs.timings,
            "{} {:.3} {:.3} {:.3} {:.3} {:.3} {:.3}",
            t.frame,
            t.filtering_ms,
            t.pose_ms,
            t.transform_ms,
            t.clustering_ms,
            t.association_ms,
            t.total_ms
        )
        .map_err(|e| io_err(&out, e))?;
        timings.push(t);

        if let Some(truth) = truth {
            truths.push(truth);
        }
        frame_index += 1;
    }

    logs.flush().map_err(|e| io_err(&out, e))?;

    if frame_index == 0 {
        return Err(PipelineError::NoFrames);
    }

    let accuracy = if truths.iter().any(|t| !t.objects.is_empty()) {
        let truth_path = out.join("ground_truth.jsonl");
        let mut w = create_log(&truth_path)?;
        for t in &truths {
            let line = serde_json::to_string(t)
                .map_err(|e| PipelineError::Config(format!("ground truth: {e}")))?;
            writeln!(w, "{line}").map_err(|e| io_err(&truth_path, e))?;
        }
        w.flush().map_err(|e| io_err(&truth_path, e))?;

        let report = score_accuracy(&records, &truths, 1.0)?;
        let acc_path = out.join("accuracy.log");
        let mut w = create_log(&acc_path)?;
        for (frame, rate) in &report.per_frame {
            writeln!(w, "{frame} {rate:.6}").map_err(|e| io_err(&acc_path, e))?;
        }
        writeln!(
            w,
            "summary median {:.6} q1 {:.6} q3 {:.6} min {:.6} max {:.6}",
            report.median, report.q1, report.q3, report.min, report.max
        )
        .map_err(|e| io_err(&acc_path, e))?;
        w.flush().map_err(|e| io_err(&acc_path, e))?;
        Some(report)
    } else {
        None
    };

    let timing_report = report_timings(&timings)?;
    Ok(RunSummary {
        frames: frame_index,
        tracks_created,
        records,
        ground_truth: truths,
        timings,
        timing_report,
        accuracy,
        discards,
        superframes_written,
        output_dir: out,
    })
}
