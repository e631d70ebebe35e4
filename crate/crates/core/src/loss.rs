//! Multi-task loss: `L = L_cls + λ·L_reg + μ·L_center`.
//!
//! * `L_cls`: focal loss over all frames, `mean(−α (1 − p_t)^γ log p_t)`.
//! * `L_reg`: `1 − tIoU` of the predicted and target offsets, averaged over
//!   positive frames.
//! * `L_center`: binary cross-entropy of center-ness against its soft target,
//!   averaged over positive frames and reported relative to the target's own
//!   entropy, so a perfect prediction scores 0. The gradient is that of plain
//!   BCE.
//!
//! Each term exists twice: on plain slices for evaluation and reporting, and
//! recorded on a [`GradTape`] for training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::FrameTargets;
use crate::model::{ForwardGraph, FramePredictions};
use crate::tape::{GradTape, NodeId, Unary};
use crate::tensor::Tensor2;

/// Probabilities are clamped into `[PROB_EPS, 1 − PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda: f64,
    pub mu: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 1.0,
            mu: 1.0,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || self.mu < 0.0 {
            return Err(Error::config("loss weights λ and μ must be ≥ 0"));
        }
        if self.focal_gamma < 0.0 {
            return Err(Error::config("focal γ must be ≥ 0"));
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha <= 1.0) {
            return Err(Error::config("focal α must lie in (0, 1]"));
        }
        Ok(())
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Mean focal loss of scores `s` against binary targets.
pub fn focal_loss(s: &[f64], target: &[bool], alpha: f64, gamma: f64) -> f64 {
    assert_eq!(s.len(), target.len());
    if s.is_empty() {
        return 0.0;
    }
    let total: f64 = s
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let pt = clamp_prob(if y { p } else { 1.0 - p });
            -alpha * (1.0 - pt).powf(gamma) * pt.ln()
        })
        .sum();
    total / s.len() as f64
}

/// Temporal IoU of two intervals sharing an anchor frame, each given as
/// `(left, right)` distances from it. Two empty intervals have IoU 1.
pub fn tiou(pred: (f64, f64), target: (f64, f64)) -> f64 {
    let inter = pred.0.min(target.0) + pred.1.min(target.1);
    let union = pred.0.max(target.0) + pred.1.max(target.1);
    if union <= 0.0 {
        return 1.0;
    }
    inter / union
}

pub fn tiou_loss(pred: (f64, f64), target: (f64, f64)) -> f64 {
    1.0 - tiou(pred, target)
}

/// Binary entropy in nats, with `0 ln 0 = 0`.
fn entropy(p: f64) -> f64 {
    let term = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// BCE of `pred` against soft target `target`, minus the target's entropy.
pub fn centerness_loss(pred: f64, target: f64) -> f64 {
    let p = clamp_prob(pred);
    let bce = -(target * p.ln() + (1.0 - target) * (1.0 - p).ln());
    bce - entropy(target)
}

/// Loss value and its three terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls: f64,
    pub reg: f64,
    pub center: f64,
}

fn check_lengths(frames: usize, targets: &FrameTargets) -> Result<()> {
    if targets.len() != frames {
        return Err(Error::contract(format!(
            "{frames} predictions for {} targets",
            targets.len()
        )));
    }
    Ok(())
}

/// The full loss evaluated on plain predictions.
pub fn loss_value(
    pred: &FramePredictions,
    targets: &FrameTargets,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    check_lengths(pred.len(), targets)?;
    let cls = focal_loss(
        &pred.scores,
        &targets.positive,
        weights.focal_alpha,
        weights.focal_gamma,
    );
    let positives = targets.positive_count();
    let (mut reg, mut center) = (0.0, 0.0);
    if positives == 0 {
        log::warn!("no positive frames; regression and center-ness terms are zero");
    } else {
        for j in 0..pred.len() {
            let (Some(offset), Some(v_star)) = (targets.offsets[j], targets.centerness[j]) else {
                continue;
            };
            reg += tiou_loss((pred.left[j], pred.right[j]), offset);
            center += centerness_loss(pred.centerness[j], v_star);
        }
        reg /= positives as f64;
        center /= positives as f64;
    }
    Ok(LossBreakdown {
        total: cls + weights.lambda * reg + weights.mu * center,
        cls,
        reg,
        center,
    })
}

/// Tape nodes for the loss and its terms (all `1 × 1`).
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: NodeId,
    pub cls: NodeId,
    pub reg: Option<NodeId>,
    pub center: Option<NodeId>,
}

impl LossNodes {
    pub fn breakdown(&self, tape: &GradTape) -> LossBreakdown {
        let read = |id: Option<NodeId>| id.map_or(0.0, |n| tape.value(n).data()[0]);
        LossBreakdown {
            total: read(Some(self.total)),
            cls: read(Some(self.cls)),
            reg: read(self.reg),
            center: read(self.center),
        }
    }
}

/// Records focal loss for a `T × 1` score node.
pub fn focal_on_tape(
    tape: &mut GradTape,
    scores: NodeId,
    target: &[bool],
    alpha: f64,
    gamma: f64,
) -> Result<NodeId> {
    let frames = target.len();
    let sign = tape.constant(Tensor2::column(
        &target.iter().map(|&y| if y { 1.0 } else { -1.0 }).collect::<Vec<_>>(),
    ));
    let offset = tape.constant(Tensor2::column(
        &target.iter().map(|&y| if y { 0.0 } else { 1.0 }).collect::<Vec<_>>(),
    ));
    // p_t = s for positives, 1 − s for negatives.
    let signed = tape.mul(scores, sign)?;
    let pt = tape.add(signed, offset)?;
    let pt = tape.unary(pt, Unary::Clamp(PROB_EPS, 1.0 - PROB_EPS));
    let log_pt = tape.unary(pt, Unary::Log);
    let neg = tape.scale(pt, -1.0);
    let one_minus = tape.add_scalar(neg, 1.0);
    let modulator = tape.unary(one_minus, Unary::Powf(gamma));
    let per_frame = tape.mul(modulator, log_pt)?;
    let total = tape.sum(per_frame);
    Ok(tape.scale(total, -alpha / frames as f64))
}

/// Records the full loss on the forward graph's tape.
pub fn total_loss(
    tape: &mut GradTape,
    graph: &ForwardGraph,
    targets: &FrameTargets,
    weights: &LossWeights,
) -> Result<LossNodes> {
    let frames = graph.frames;
    check_lengths(frames, targets)?;
    let cls = focal_on_tape(
        tape,
        graph.scores,
        &targets.positive,
        weights.focal_alpha,
        weights.focal_gamma,
    )?;
    let positives = targets.positive_count();
    if positives == 0 {
        log::warn!("no positive frames; regression and center-ness terms are zero");
        return Ok(LossNodes {
            total: cls,
            cls,
            reg: None,
            center: None,
        });
    }
    let inv_pos = 1.0 / positives as f64;
    let pos = tape.constant(Tensor2::column(
        &targets
            .positive
            .iter()
            .map(|&p| if p { 1.0 } else { 0.0 })
            .collect::<Vec<_>>(),
    ));

    // Regression: 1 − tIoU on positives. Negatives get a placeholder target
    // and are masked out.
    let offset_target = Tensor2::from_fn(frames, 2, |j, c| match targets.offsets[j] {
        Some((l, r)) => {
            if c == 0 {
                l
            } else {
                r
            }
        }
        None => 1.0,
    });
    let target = tape.constant(offset_target);
    let ones = tape.constant(Tensor2::filled(2, 1, 1.0));
    let lo = tape.min(graph.offsets, target)?;
    let hi = tape.max(graph.offsets, target)?;
    let inter = tape.matmul(lo, ones)?;
    let union = tape.matmul(hi, ones)?;
    let floor = tape.constant(Tensor2::filled(frames, 1, 1e-12));
    let union = tape.max(union, floor)?;
    let iou = tape.div(inter, union)?;
    let neg_iou = tape.scale(iou, -1.0);
    let per_frame = tape.add_scalar(neg_iou, 1.0);
    let masked = tape.mul(per_frame, pos)?;
    let reg_sum = tape.sum(masked);
    let reg = tape.scale(reg_sum, inv_pos);

    let weighted_reg = tape.scale(reg, weights.lambda);
    let mut total = tape.add(cls, weighted_reg)?;
    let mut center = None;

    if let Some(v) = graph.centerness {
        let v_star: Vec<f64> = targets.centerness.iter().map(|c| c.unwrap_or(0.0)).collect();
        let entropy_sum: f64 = v_star
            .iter()
            .zip(&targets.positive)
            .filter(|(_, &p)| p)
            .map(|(&t, _)| entropy(t))
            .sum();
        let vc = tape.unary(v, Unary::Clamp(PROB_EPS, 1.0 - PROB_EPS));
        let log_v = tape.unary(vc, Unary::Log);
        let neg_v = tape.scale(vc, -1.0);
        let one_minus_v = tape.add_scalar(neg_v, 1.0);
        let log_1mv = tape.unary(one_minus_v, Unary::Log);
        let tgt = tape.constant(Tensor2::column(&v_star));
        let tgt_c = tape.constant(Tensor2::column(
            &v_star.iter().map(|t| 1.0 - t).collect::<Vec<_>>(),
        ));
        let a = tape.mul(log_v, tgt)?;
        let b = tape.mul(log_1mv, tgt_c)?;
        let ll = tape.add(a, b)?;
        let masked = tape.mul(ll, pos)?;
        let ll_sum = tape.sum(masked);
        // −(Σ ll + Σ H) / n_pos
        let shifted = tape.add_scalar(ll_sum, entropy_sum);
        let c = tape.scale(shifted, -inv_pos);
        let weighted = tape.scale(c, weights.mu);
        total = tape.add(total, weighted)?;
        center = Some(c);
    }

    Ok(LossNodes {
        total,
        cls,
        reg: Some(reg),
        center,
    })
}
