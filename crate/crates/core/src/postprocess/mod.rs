//! Inference-time summary generation: proposals, suppression, shot
//! segmentation, shot scoring and budgeted selection.

mod kts;
mod knapsack;
mod nms;

pub use kts::{
    default_max_segments, kts_segment, kts_segment_tensor, segments_from_change_points,
    unit_normalize, Segmentation,
};
pub use knapsack::{budget_frames, knapsack};
pub use nms::{interval_iou, nms};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::labels::KtsParams;
use crate::model::FramePredictions;

/// A candidate summary segment anchored at one frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub frame: usize,
    pub start: f64,
    pub end: f64,
    pub confidence: f64,
}

/// A `[start, end)` frame interval with its aggregated importance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shot {
    pub start: usize,
    pub end: usize,
    pub importance: f64,
}

impl Shot {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Selected shots and the frame mask they cover.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub shots: Vec<Shot>,
    pub selected: Vec<bool>,
    pub mask: Vec<bool>,
    pub budget: usize,
}

impl Summary {
    pub fn from_selection(shots: Vec<Shot>, selected: Vec<bool>, frames: usize, budget: usize) -> Self {
        let mut mask = vec![false; frames];
        for (shot, _) in shots.iter().zip(&selected).filter(|(_, &s)| s) {
            mask[shot.start..shot.end].iter_mut().for_each(|m| *m = true);
        }
        Summary {
            shots,
            selected,
            mask,
            budget,
        }
    }

    pub fn frames_used(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn selected_shots(&self) -> impl Iterator<Item = &Shot> {
        self.shots
            .iter()
            .zip(&self.selected)
            .filter(|(_, &s)| s)
            .map(|(shot, _)| shot)
    }

    /// Indices of frames in the summary, for external cutters.
    pub fn frame_indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i)
            .collect()
    }
}

/// How per-frame scores are derived before shot aggregation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameScoreMode {
    /// Max confidence among NMS survivors covering the frame, 0 if none.
    #[default]
    MaxKept,
    /// The frame's own `s × v`.
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostprocessConfig {
    pub nms_iou: f64,
    pub min_confidence: f64,
    /// `None` means one segment per ten frames.
    pub kts_max_segments: Option<usize>,
    pub kts_penalty: f64,
    pub budget_fraction: f64,
    pub frame_scores: FrameScoreMode,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            nms_iou: 0.5,
            min_confidence: 0.0,
            kts_max_segments: None,
            kts_penalty: 0.0,
            budget_fraction: 0.15,
            frame_scores: FrameScoreMode::MaxKept,
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(Error::config(format!("nms_iou {} outside [0, 1]", self.nms_iou)));
        }
        if !(0.0..=1.0).contains(&self.budget_fraction) {
            return Err(Error::config(format!(
                "budget_fraction {} outside [0, 1]",
                self.budget_fraction
            )));
        }
        if self.kts_penalty < 0.0 || !self.kts_penalty.is_finite() {
            return Err(Error::config("kts_penalty must be finite and ≥ 0"));
        }
        if self.kts_max_segments == Some(0) {
            return Err(Error::config("kts_max_segments must be ≥ 1"));
        }
        Ok(())
    }

    pub fn max_segments(&self, frames: usize) -> usize {
        self.kts_max_segments
            .unwrap_or_else(|| default_max_segments(frames))
    }

    pub fn kts(&self) -> KtsParams {
        KtsParams {
            max_segments: self.kts_max_segments,
            penalty: self.kts_penalty,
        }
    }
}

/// One proposal per frame whose confidence `s × v` reaches `min_confidence`.
pub fn make_proposals(pred: &FramePredictions, min_confidence: f64) -> Vec<Proposal> {
    let frames = pred.len();
    let last = frames.saturating_sub(1) as f64;
    (0..frames)
        .filter_map(|j| {
            let confidence = pred.scores[j] * pred.centerness[j];
            (confidence >= min_confidence).then(|| Proposal {
                frame: j,
                start: (j as f64 - pred.left[j]).max(0.0),
                end: (j as f64 + pred.right[j]).min(last),
                confidence,
            })
        })
        .collect()
}

/// Per-frame scores: max confidence among `kept` proposals covering the frame.
pub fn project_frame_scores(kept: &[Proposal], frames: usize) -> Vec<f64> {
    let mut scores = vec![0.0f64; frames];
    for p in kept {
        let lo = p.start.ceil().max(0.0) as usize;
        let hi = p.end.floor();
        if hi < 0.0 {
            continue;
        }
        let hi = (hi as usize).min(frames.saturating_sub(1));
        for s in scores.iter_mut().take(hi + 1).skip(lo) {
            *s = s.max(p.confidence);
        }
    }
    scores
}

/// Mean frame score within each shot.
pub fn score_shots(frame_scores: &[f64], shots: &[(usize, usize)]) -> Vec<Shot> {
    shots
        .iter()
        .map(|&(start, end)| {
            let span = &frame_scores[start..end];
            let importance = if span.is_empty() {
                0.0
            } else {
                span.iter().sum::<f64>() / span.len() as f64
            };
            Shot {
                start,
                end,
                importance,
            }
        })
        .collect()
}

/// Exact knapsack over shot importances with shot lengths as weights.
pub fn knapsack_select(shots: Vec<Shot>, frames: usize, budget: usize) -> Summary {
    let values: Vec<f64> = shots.iter().map(|s| s.importance).collect();
    let weights: Vec<usize> = shots.iter().map(Shot::len).collect();
    let selected = knapsack(&values, &weights, budget);
    Summary::from_selection(shots, selected, frames, budget)
}

/// Shot boundaries from KTS over unit-normalized features.
pub fn segment_shots(features: &FeatureSequence, config: &PostprocessConfig) -> Vec<(usize, usize)> {
    let frames = features.frames();
    let cps = kts_segment(features, config.max_segments(frames), config.kts_penalty);
    segments_from_change_points(&cps, frames)
}

/// Shot selection from per-frame scores over precomputed shot boundaries.
pub fn select_from_frame_scores(
    frame_scores: &[f64],
    shots: &[(usize, usize)],
    budget_fraction: f64,
) -> Summary {
    let frames = frame_scores.len();
    let scored = score_shots(frame_scores, shots);
    knapsack_select(scored, frames, budget_frames(budget_fraction, frames))
}

/// Full pipeline from model predictions to a budgeted summary.
pub fn summarize(
    pred: &FramePredictions,
    features: &FeatureSequence,
    config: &PostprocessConfig,
) -> Result<Summary> {
    config.validate()?;
    if pred.len() != features.frames() {
        return Err(Error::contract(format!(
            "predictions cover {} frames but features have {}",
            pred.len(),
            features.frames()
        )));
    }
    let frame_scores = match config.frame_scores {
        FrameScoreMode::MaxKept => {
            let proposals = make_proposals(pred, config.min_confidence);
            let kept = nms(&proposals, config.nms_iou);
            project_frame_scores(&kept, pred.len())
        }
        FrameScoreMode::Raw => pred.confidences(),
    };
    let shots = segment_shots(features, config);
    Ok(select_from_frame_scores(
        &frame_scores,
        &shots,
        config.budget_fraction,
    ))
}
