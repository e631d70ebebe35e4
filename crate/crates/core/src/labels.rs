//! Training targets from user annotations.
//!
//! Mean user scores are segmented into shots with KTS over the visual
//! features, shots are scored by their mean, and a knapsack picks keyshots
//! under the length budget. Every frame inside a keyshot is positive and
//! regresses its distances to the keyshot's first and last frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::postprocess::{
    budget_frames, default_max_segments, knapsack, kts_segment, segments_from_change_points,
};

/// KTS settings shared by target construction and inference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KtsParams {
    pub max_segments: Option<usize>,
    pub penalty: f64,
}

/// Shot partition of a video and which shots are keyshots.
#[derive(Clone, Debug, PartialEq)]
pub struct ShotAnnotation {
    pub frames: usize,
    /// `[start, end)` intervals partitioning `[0, frames)`.
    pub shots: Vec<(usize, usize)>,
    pub keyshot: Vec<bool>,
}

impl ShotAnnotation {
    pub fn keyshots(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.shots
            .iter()
            .zip(&self.keyshot)
            .filter(|(_, &k)| k)
            .map(|(&s, _)| s)
    }

    pub fn frame_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.frames];
        for (s, e) in self.keyshots() {
            mask[s..e].iter_mut().for_each(|m| *m = true);
        }
        mask
    }
}

/// Validates a `U × T` score matrix and returns the per-frame mean.
pub fn mean_user_scores(user_scores: &[Vec<f64>], frames: usize) -> Result<Vec<f64>> {
    if user_scores.is_empty() {
        return Err(Error::contract("no user scores"));
    }
    for (u, row) in user_scores.iter().enumerate() {
        if row.len() != frames {
            return Err(Error::contract(format!(
                "user {u} has {} scores for {frames} frames",
                row.len()
            )));
        }
        if row.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::contract(format!("user {u} has scores outside [0, 1]")));
        }
    }
    let n = user_scores.len() as f64;
    Ok((0..frames)
        .map(|t| user_scores.iter().map(|r| r[t]).sum::<f64>() / n)
        .collect())
}

/// Keyshots from frame scores: KTS shots, mean scoring, knapsack under
/// `floor(budget_fraction × T)`.
pub fn annotate_from_scores(
    frame_scores: &[f64],
    features: &FeatureSequence,
    budget_fraction: f64,
    kts: KtsParams,
) -> Result<ShotAnnotation> {
    let frames = features.frames();
    if frame_scores.len() != frames {
        return Err(Error::contract(format!(
            "{} scores for {frames} frames",
            frame_scores.len()
        )));
    }
    let max_segments = kts.max_segments.unwrap_or_else(|| default_max_segments(frames));
    let cps = kts_segment(features, max_segments, kts.penalty);
    let shots = segments_from_change_points(&cps, frames);
    let values: Vec<f64> = shots
        .iter()
        .map(|&(s, e)| frame_scores[s..e].iter().sum::<f64>() / (e - s) as f64)
        .collect();
    let weights: Vec<usize> = shots.iter().map(|&(s, e)| e - s).collect();
    let keyshot = knapsack(&values, &weights, budget_frames(budget_fraction, frames));
    Ok(ShotAnnotation {
        frames,
        shots,
        keyshot,
    })
}

/// Shot-level keyshot annotation from all users' scores.
pub fn to_shot_level_annotation(
    user_scores: &[Vec<f64>],
    features: &FeatureSequence,
    budget_fraction: f64,
    kts: KtsParams,
) -> Result<ShotAnnotation> {
    let mean = mean_user_scores(user_scores, features.frames())?;
    annotate_from_scores(&mean, features, budget_fraction, kts)
}

/// `(j − t_start, t_end − 1 − j)` when `j` lies in a keyshot.
pub fn compute_boundary(j: usize, annotation: &ShotAnnotation) -> Option<(f64, f64)> {
    annotation
        .keyshots()
        .find(|&(s, e)| (s..e).contains(&j))
        .map(|(s, e)| ((j - s) as f64, (e - 1 - j) as f64))
}

/// `sqrt(min / max)`; a single-frame segment (both zero) is perfectly centered.
pub fn compute_centerness(left: f64, right: f64) -> f64 {
    let (lo, hi) = (left.min(right), left.max(right));
    if hi <= 0.0 {
        return 1.0;
    }
    (lo / hi).sqrt()
}

/// Per-frame targets. Offsets and center-ness exist only on positives.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTargets {
    pub positive: Vec<bool>,
    pub offsets: Vec<Option<(f64, f64)>>,
    pub centerness: Vec<Option<f64>>,
}

impl FrameTargets {
    pub fn from_annotation(annotation: &ShotAnnotation) -> Self {
        let offsets: Vec<Option<(f64, f64)>> = (0..annotation.frames)
            .map(|j| compute_boundary(j, annotation))
            .collect();
        FrameTargets {
            positive: offsets.iter().map(Option::is_some).collect(),
            centerness: offsets
                .iter()
                .map(|o| o.map(|(l, r)| compute_centerness(l, r)))
                .collect(),
            offsets,
        }
    }

    pub fn len(&self) -> usize {
        self.positive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positive.is_empty()
    }

    pub fn positive_count(&self) -> usize {
        self.positive.iter().filter(|&&p| p).count()
    }
}
