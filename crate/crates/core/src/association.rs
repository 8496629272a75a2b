//! Frame-to-frame data association.
//!
//! For every previous-frame track, current clusters are gated by chi-squared
//! distance between histograms, survivors are scored by the maximum deviation
//! test over the histogram CDFs, and near-ties fall through to the motion
//! model: Gaussian likelihood of each candidate under the track's predicted
//! position once the track has enough history, nearest predicted centroid
//! before that. Tracks claim clusters greedily in descending confidence
//! order, which keeps the matching injective both ways.

use crate::descriptor::{chi_squared_distance, VfhDescriptor};
use crate::segmentation::ObjectCluster;
use crate::tracker::{position_log_density, MotionState, Track, TrackId};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AssociationError {
    #[error("cdf length mismatch: {left} vs {right}")]
    CdfLengthMismatch { left: usize, right: usize },
}

/// Association thresholds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct AssociationConfig {
    /// Chi-squared gate in (0, 2].
    pub chi2_gate: f64,
    /// Two MDT scores closer than this are a tie.
    pub mdt_tie_epsilon: f64,
    /// Motion likelihood needs this many frames of track history.
    pub min_frames_for_motion: u64,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        Self {
            chi2_gate: 0.5,
            mdt_tie_epsilon: 0.02,
            min_frames_for_motion: 3,
        }
    }
}

/// MDT similarity: one minus the maximum pointwise CDF deviation, in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct MdtScore(pub f64);

/// Maximum deviation test between two CDFs: `1 - max_i |F1[i] - F2[i]|`.
/// Identical CDFs score 1; disjoint unit steps score 0.
pub fn mdt_score(f1: &[f64], f2: &[f64]) -> Result<MdtScore, AssociationError> {
    if f1.len() != f2.len() {
        return Err(AssociationError::CdfLengthMismatch {
            left: f1.len(),
            right: f2.len(),
        });
    }
    let max_dev = f1
        .iter()
        .zip(f2.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0_f64, f64::max);
    Ok(MdtScore(1.0 - max_dev))
}

/// A segmented cluster paired with its descriptor, as seen by association.
#[derive(Debug, Clone)]
pub struct ClusterObservation {
    pub cluster: ObjectCluster,
    pub descriptor: VfhDescriptor,
}

/// One gated candidate for a track.
#[derive(Debug, Clone, Copy)]
pub struct Candidate {
    /// Index into the frame's cluster list.
    pub cluster: usize,
    pub chi2: f64,
    pub mdt: f64,
    pub motion_log_likelihood: Option<f64>,
}

/// All candidates that survived the chi-squared gate for one track.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub track: TrackId,
    pub candidates: Vec<Candidate>,
}

/// Which rule settled a track's decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    NoCandidates,
    SingleCandidate,
    HighestMdt,
    MotionLikelihood,
    NearestCentroid,
}

/// Per-track record of what association saw and decided, for the optional
/// debug trace.
#[derive(Debug, Clone)]
pub struct TraceEntry {
    pub track: TrackId,
    pub candidates: Vec<Candidate>,
    pub chosen: Option<usize>,
    pub tie_break: TieBreak,
}

/// Frame-level outcome: injective track-to-cluster matches plus both kinds of
/// leftovers.
#[derive(Debug, Clone, Default)]
pub struct AssociationResult {
    pub matches: Vec<(TrackId, usize)>,
    pub unmatched_tracks: Vec<TrackId>,
    pub unmatched_clusters: Vec<usize>,
    pub trace: Vec<TraceEntry>,
}

/// Chi-squared gate: every cluster whose histogram distance to the track's
/// stored descriptor is at most `chi2_gate`, with its MDT score precomputed.
/// `skip` marks clusters already claimed by earlier tracks.
pub fn gate(
    track: &Track,
    observations: &[ClusterObservation],
    skip: &[bool],
    cfg: &AssociationConfig,
) -> CandidateSet {
    let mut candidates = Vec::new();
    for (idx, obs) in observations.iter().enumerate() {
        if skip.get(idx).copied().unwrap_or(false) {
            continue;
        }
        let chi2 = chi_squared_distance(track.descriptor.pdf(), obs.descriptor.pdf());
        if chi2 <= cfg.chi2_gate {
            let mdt = mdt_score(track.descriptor.cdf(), obs.descriptor.cdf())
                .expect("descriptors share the fixed bin layout")
                .0;
            candidates.push(Candidate {
                cluster: idx,
                chi2,
                mdt,
                motion_log_likelihood: None,
            });
        }
    }
    CandidateSet {
        track: track.id,
        candidates,
    }
}

fn nearest_by<F: Fn(&Candidate) -> f64>(candidates: &[Candidate], key: F) -> usize {
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate().skip(1) {
        let (kb, ki) = (key(&candidates[best]), key(c));
        if ki < kb || (ki == kb && c.cluster < candidates[best].cluster) {
            best = i;
        }
    }
    candidates[best].cluster
}

/// Picks a cluster for one track out of its gated candidates.
///
/// Zero candidates resolve to none; a single candidate is taken outright;
/// otherwise the highest MDT score wins, and scores tied within epsilon are
/// settled by motion likelihood (with enough history) or by nearest predicted
/// centroid. Any remaining tie falls back to the lowest cluster id.
pub fn resolve(
    track: &Track,
    candidate_set: &CandidateSet,
    prediction: &MotionState,
    observations: &[ClusterObservation],
    cfg: &AssociationConfig,
) -> (Option<usize>, TieBreak, Vec<Candidate>) {
    let mut candidates = candidate_set.candidates.clone();
    match candidates.len() {
        0 => return (None, TieBreak::NoCandidates, candidates),
        1 => {
            let chosen = candidates[0].cluster;
            return (Some(chosen), TieBreak::SingleCandidate, candidates);
        }
        _ => {}
    }

    // Highest MDT first; equal scores ordered by cluster id for determinism.
    candidates.sort_by(|a, b| {
        b.mdt
            .total_cmp(&a.mdt)
            .then_with(|| a.cluster.cmp(&b.cluster))
    });
    let top_score = candidates[0].mdt;
    let runner_up = candidates[1].mdt;

    if top_score - runner_up >= cfg.mdt_tie_epsilon {
        return (Some(candidates[0].cluster), TieBreak::HighestMdt, candidates);
    }

    let tied_upper = candidates
        .iter()
        .position(|c| top_score - c.mdt >= cfg.mdt_tie_epsilon)
        .unwrap_or(candidates.len());
    let tied = &mut candidates[..tied_upper];

    if track.age >= cfg.min_frames_for_motion {
        for c in tied.iter_mut() {
            let centroid = observations[c.cluster].cluster.centroid;
            c.motion_log_likelihood = position_log_density(prediction, &centroid);
        }
        if tied.iter().all(|c| c.motion_log_likelihood.is_some()) {
            let chosen = {
                let mut best = 0;
                for (i, c) in tied.iter().enumerate().skip(1) {
                    let (lb, li) = (
                        tied[best].motion_log_likelihood.unwrap(),
                        c.motion_log_likelihood.unwrap(),
                    );
                    if li > lb || (li == lb && c.cluster < tied[best].cluster) {
                        best = i;
                    }
                }
                tied[best].cluster
            };
            return (Some(chosen), TieBreak::MotionLikelihood, candidates);
        }
    }

    let chosen = nearest_by(tied, |c| {
        (observations[c.cluster].cluster.centroid - prediction.position).norm()
    });
    (Some(chosen), TieBreak::NearestCentroid, candidates)
}

/// Runs the full per-frame association loop.
///
/// Tracks resolve in descending confidence order (ties by ascending id); a
/// cluster claimed by an earlier track disappears from later candidate sets,
/// so the matching is injective both ways. `predictions` must be parallel to
/// `tracks`.
pub fn associate_frame(
    tracks: &[Track],
    observations: &[ClusterObservation],
    predictions: &[MotionState],
    cfg: &AssociationConfig,
) -> AssociationResult {
    assert_eq!(
        tracks.len(),
        predictions.len(),
        "one prediction per track required"
    );

    let mut order: Vec<usize> = (0..tracks.len()).collect();
    order.sort_by(|&a, &b| {
        tracks[b]
            .confidence
            .total_cmp(&tracks[a].confidence)
            .then_with(|| tracks[a].id.cmp(&tracks[b].id))
    });

    let mut claimed = vec![false; observations.len()];
    let mut result = AssociationResult::default();

    for &t in &order {
        let track = &tracks[t];
        let candidate_set = gate(track, observations, &claimed, cfg);
        let (chosen, tie_break, candidates) =
            resolve(track, &candidate_set, &predictions[t], observations, cfg);
        match chosen {
            Some(cluster) => {
                claimed[cluster] = true;
                result.matches.push((track.id, cluster));
            }
            None => result.unmatched_tracks.push(track.id),
        }
        result.trace.push(TraceEntry {
            track: track.id,
            candidates,
            chosen,
            tie_break,
        });
    }

    result.unmatched_clusters = (0..observations.len()).filter(|&i| !claimed[i]).collect();
    result
}
