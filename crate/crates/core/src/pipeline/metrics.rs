//! Evaluation: identity-preservation accuracy against ground truth, and the
//! per-stage timing table.

use super::{PipelineError, TrackRecord};
use crate::ingest::GroundTruthFrame;
use std::collections::HashMap;

/// Per-stage wall-clock times for one frame, milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameTimings {
    pub frame: u64,
    pub filtering_ms: f64,
    pub pose_ms: f64,
    pub transform_ms: f64,
    pub clustering_ms: f64,
    pub association_ms: f64,
    /// Independently measured wall time around the whole frame.
    pub total_ms: f64,
}

/// Identity-preservation accuracy: a ground-truth object counts as correctly
/// tracked in a frame when some track centroid lies within the match radius
/// and that track's id equals the one assigned to the object in the previous
/// frame (the object's first visible frame is free).
#[derive(Debug, Clone)]
pub struct AccuracyReport {
    pub per_frame: Vec<(u64, f64)>,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let t = pos - lo as f64;
        sorted[lo] * (1.0 - t) + sorted[hi] * t
    }
}

/// Scores a track log against ground truth.
///
/// Assignment per object per frame is the nearest track centroid within
/// `match_radius` (ties to the lowest track id); the rate for a frame is the
/// fraction of visible objects correctly tracked. The result is invariant to
/// any relabeling of track ids that preserves the assignment structure.
pub fn score_accuracy(
    records: &[TrackRecord],
    truth: &[GroundTruthFrame],
    match_radius: f64,
) -> Result<AccuracyReport, PipelineError> {
    if truth.iter().all(|t| t.objects.is_empty()) {
        return Err(PipelineError::EmptyGroundTruth);
    }

    let mut tracks_by_frame: HashMap<u64, Vec<&TrackRecord>> = HashMap::new();
    for r in records {
        tracks_by_frame.entry(r.frame).or_default().push(r);
    }

    // Previous-frame assignment per object id; None entries mean the object
    // was visible but unassigned.
    let mut previous: HashMap<u64, Option<u64>> = HashMap::new();
    let mut seen_before: std::collections::HashSet<u64> = std::collections::HashSet::new();
    let mut per_frame = Vec::new();

    let mut frames: Vec<&GroundTruthFrame> = truth.iter().collect();
    frames.sort_by_key(|t| t.frame);

    for gt in frames {
        if gt.objects.is_empty() {
            previous.clear();
            continue;
        }
        let tracks = tracks_by_frame.get(&gt.frame).map(Vec::as_slice).unwrap_or(&[]);
        let mut current: HashMap<u64, Option<u64>> = HashMap::new();
        let mut correct = 0usize;

        for obj in &gt.objects {
            let centroid = obj.centroid_vec();
            let mut assigned: Option<(f64, u64)> = None;
            for track in tracks {
                let d = (track.position - centroid).norm();
                if d <= match_radius {
                    let better = match assigned {
                        None => true,
                        Some((bd, bid)) => d < bd || (d == bd && track.id < bid),
                    };
                    if better {
                        assigned = Some((d, track.id));
                    }
                }
            }
            let assigned_id = assigned.map(|(_, id)| id);
            let first_visible = !seen_before.contains(&obj.id);
            let preserved = match (assigned_id, previous.get(&obj.id)) {
                (Some(_), _) if first_visible => true,
                (Some(id), Some(Some(prev))) => id == *prev,
                _ => false,
            };
            if preserved {
                correct += 1;
            }
            current.insert(obj.id, assigned_id);
            seen_before.insert(obj.id);
        }

        per_frame.push((gt.frame, correct as f64 / gt.objects.len() as f64));
        previous = current;
    }

    let mut rates: Vec<f64> = per_frame.iter().map(|&(_, r)| r).collect();
    rates.sort_by(f64::total_cmp);
    Ok(AccuracyReport {
        median: quantile(&rates, 0.5),
        q1: quantile(&rates, 0.25),
        q3: quantile(&rates, 0.75),
        min: *rates.first().unwrap_or(&f64::NAN),
        max: *rates.last().unwrap_or(&f64::NAN),
        per_frame,
    })
}

/// Mean per-stage and total timings, with the implied frame rate.
#[derive(Debug, Clone)]
pub struct TimingReport {
    pub rows: Vec<(&'static str, f64)>,
    pub stage_sum_ms: f64,
    pub wall_total_ms: f64,
    pub hz: f64,
    pub frames: usize,
}

/// Aggregates per-frame timings into the reporting table. The row labels
/// mirror the reference implementation's process names; the stage sum and the
/// independently measured wall total are both reported.
pub fn report_timings(timings: &[FrameTimings]) -> Result<TimingReport, PipelineError> {
    if timings.is_empty() {
        return Err(PipelineError::NoFrames);
    }
    let n = timings.len() as f64;
    let mean = |f: fn(&FrameTimings) -> f64| timings.iter().map(f).sum::<f64>() / n;
    let rows: Vec<(&'static str, f64)> = vec![
        ("LiDAR Point Cloud Filtering", mean(|t| t.filtering_ms)),
        ("Pose Estimation (EKF)", mean(|t| t.pose_ms)),
        ("Point Cloud Transformation", mean(|t| t.transform_ms)),
        ("Data Association (DBSCAN)", mean(|t| t.clustering_ms)),
        ("Frame-to-frame mapping (MDT)", mean(|t| t.association_ms)),
    ];
    let stage_sum_ms: f64 = rows.iter().map(|&(_, v)| v).sum();
    let wall_total_ms = mean(|t| t.total_ms);
    Ok(TimingReport {
        rows,
        stage_sum_ms,
        wall_total_ms,
        hz: 1000.0 / wall_total_ms,
        frames: timings.len(),
    })
}

impl std::fmt::Display for TimingReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let width = self
            .rows
            .iter()
            .map(|(name, _)| name.len())
            .max()
            .unwrap_or(0)
            .max("Methodology Total".len());
        writeln!(f, "{:<width$}  MEAN TIME (ms)", "PROCESS")?;
        for (name, ms) in &self.rows {
            writeln!(f, "{name:<width$}  {ms:>12.4}")?;
        }
        writeln!(f, "{:<width$}  {:>12.4}", "Stage Sum", self.stage_sum_ms)?;
        writeln!(
            f,
            "{:<width$}  {:>12.4} ({:.1} Hz)",
            "Methodology Total", self.wall_total_ms, self.hz
        )?;
        write!(f, "frames: {}", self.frames)
    }
}
