//! F-score evaluation against per-user keyshot summaries.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Video;
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::labels::{annotate_from_scores, KtsParams};
use crate::model::{forward, FramePredictions, ModelConfig};
use crate::optim::ModelParams;
use crate::postprocess::{summarize, PostprocessConfig, Summary};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// Frame-overlap precision, recall and F1. Empty denominators give 0.
pub fn fscore(pred: &[bool], user: &[bool]) -> Result<Prf> {
    if pred.len() != user.len() {
        return Err(Error::contract(format!(
            "mask lengths differ: {} vs {}",
            pred.len(),
            user.len()
        )));
    }
    let overlap = pred.iter().zip(user).filter(|(&p, &u)| p && u).count() as f64;
    let n_pred = pred.iter().filter(|&&p| p).count() as f64;
    let n_user = user.iter().filter(|&&u| u).count() as f64;
    let precision = if n_pred > 0.0 { overlap / n_pred } else { 0.0 };
    let recall = if n_user > 0.0 { overlap / n_user } else { 0.0 };
    let f = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Prf { precision, recall, f })
}

/// One user's keyshot mask, built exactly like training targets.
pub fn user_mask_from_scores(
    user_scores: &[f64],
    features: &FeatureSequence,
    budget_fraction: f64,
    kts: KtsParams,
) -> Result<Vec<bool>> {
    if user_scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::contract("user scores outside [0, 1]"));
    }
    Ok(annotate_from_scores(user_scores, features, budget_fraction, kts)?.frame_mask())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    #[default]
    Max,
    Mean,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VideoEval {
    pub id: String,
    pub frames: usize,
    pub users: Vec<Prf>,
    pub max_f: f64,
    pub mean_f: f64,
    /// `max_f` or `mean_f` per the protocol in use.
    pub f: f64,
    pub summary_frames: usize,
    pub budget: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalResult {
    pub protocol: Protocol,
    pub split: Option<usize>,
    pub videos: Vec<VideoEval>,
    pub mean_f: f64,
}

/// Scores one summary against every user of a video.
pub fn evaluate_summary(
    video: &Video,
    summary: &Summary,
    budget_fraction: f64,
    kts: KtsParams,
    protocol: Protocol,
) -> Result<VideoEval> {
    let users = video
        .user_scores
        .iter()
        .map(|row| {
            let mask = user_mask_from_scores(row, &video.visual, budget_fraction, kts)?;
            fscore(&summary.mask, &mask)
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::video(&video.id, e.to_string()))?;
    let max_f = users.iter().map(|u| u.f).fold(0.0, f64::max);
    let mean_f = users.iter().map(|u| u.f).sum::<f64>() / users.len().max(1) as f64;
    Ok(VideoEval {
        id: video.id.clone(),
        frames: video.n_frames(),
        f: match protocol {
            Protocol::Max => max_f,
            Protocol::Mean => mean_f,
        },
        users,
        max_f,
        mean_f,
        summary_frames: summary.frames_used(),
        budget: summary.budget,
    })
}

/// Model predictions and the resulting summary for one video.
#[derive(Clone, Debug)]
pub struct VideoOutput {
    pub predictions: FramePredictions,
    pub summary: Summary,
}

pub fn run_video(
    video: &Video,
    params: &ModelParams,
    model: &ModelConfig,
    post: &PostprocessConfig,
) -> Result<VideoOutput> {
    let predictions = forward(&video.visual, &video.audio, params, model)?.predictions;
    let summary = summarize(&predictions, &video.visual, post)?;
    Ok(VideoOutput { predictions, summary })
}

/// Runs the model on every video and aggregates F per protocol.
pub fn evaluate(
    videos: &[&Video],
    params: &ModelParams,
    model: &ModelConfig,
    post: &PostprocessConfig,
    protocol: Protocol,
) -> Result<EvalResult> {
    if videos.is_empty() {
        return Err(Error::config("evaluation split is empty"));
    }
    post.validate()?;
    let per_video = videos
        .par_iter()
        .map(|v| {
            let out = run_video(v, params, model, post)?;
            evaluate_summary(v, &out.summary, post.budget_fraction, post.kts(), protocol)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_f = per_video.iter().map(|v| v.f).sum::<f64>() / per_video.len() as f64;
    Ok(EvalResult {
        protocol,
        split: None,
        videos: per_video,
        mean_f,
    })
}

/// Seeded assignment of `n` items to `k` folds of near-equal size.
pub fn kfold_assign(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::config("fold count must be ≥ 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![0; n];
    for (position, &item) in order.iter().enumerate() {
        folds[item] = position % k;
    }
    Ok(folds)
}

/// Alternating run lengths of a mask, starting with a (possibly empty)
/// run of `false`.
pub fn run_length_encode(mask: &[bool]) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0;
    for &m in mask {
        if m == current {
            len += 1;
        } else {
            runs.push(len);
            current = m;
            len = 1;
        }
    }
    if len > 0 || runs.is_empty() {
        runs.push(len);
    }
    runs
}

pub fn run_length_decode(runs: &[usize]) -> Vec<bool> {
    runs.iter()
        .enumerate()
        .flat_map(|(i, &n)| std::iter::repeat(i % 2 == 1).take(n))
        .collect()
}

/// Serializable summary of one video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub video: String,
    pub frames: usize,
    pub shots: Vec<[usize; 2]>,
    pub mask_rle: Vec<usize>,
    pub budget: usize,
    pub frames_used: usize,
    pub seconds_used: f64,
}

impl SummaryRecord {
    pub fn new(video: &str, summary: &Summary, fps: f64) -> Self {
        SummaryRecord {
            video: video.to_string(),
            frames: summary.mask.len(),
            shots: summary.selected_shots().map(|s| [s.start, s.end]).collect(),
            mask_rle: run_length_encode(&summary.mask),
            budget: summary.budget,
            frames_used: summary.frames_used(),
            seconds_used: summary.frames_used() as f64 / fps,
        }
    }
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("record serializes");
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Per-frame `frame,s,v,co,dl,dr,mask` table for plotting.
pub fn write_score_curve(path: impl AsRef<Path>, pred: &FramePredictions, mask: &[bool]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "frame,s,v,co,dl,dr,mask").map_err(io)?;
    for j in 0..pred.len() {
        writeln!(
            w,
            "{j},{},{},{},{},{},{}",
            pred.scores[j],
            pred.centerness[j],
            pred.scores[j] * pred.centerness[j],
            pred.left[j],
            pred.right[j],
            u8::from(mask[j])
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Human-readable per-video table with a dataset mean row.
pub fn format_table(result: &EvalResult) -> String {
    let mut s = String::new();
    let label = match result.protocol {
        Protocol::Max => "max",
        Protocol::Mean => "mean",
    };
    writeln!(s, "{:<16} {:>6} {:>8} {:>8} {:>8}", "video", "frames", "summary", "budget", format!("F({label})")).unwrap();
    for v in &result.videos {
        writeln!(
            s,
            "{:<16} {:>6} {:>8} {:>8} {:>8.4}",
            v.id, v.frames, v.summary_frames, v.budget, v.f
        )
        .unwrap();
    }
    write!(s, "{:<16} {:>6} {:>8} {:>8} {:>8.4}", "mean", "", "", "", result.mean_f).unwrap();
    s
}
