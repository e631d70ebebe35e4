use std::cmp::Ordering;

use super::Proposal;

/// IoU of two closed intervals on the real frame axis. Two zero-length
/// intervals at the same position have IoU 1.
pub fn interval_iou(a: &Proposal, b: &Proposal) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = (a.end - a.start) + (b.end - b.start) - inter;
    if union <= 0.0 {
        return if a.start == b.start { 1.0 } else { 0.0 };
    }
    inter / union
}

/// Higher confidence first, then earlier start, then lower input index.
fn rank(a: &(usize, &Proposal), b: &(usize, &Proposal)) -> Ordering {
    b.1.confidence
        .total_cmp(&a.1.confidence)
        .then(a.1.start.total_cmp(&b.1.start))
        .then(a.0.cmp(&b.0))
}

/// Greedy non-maximum suppression: keep the best remaining proposal, drop
/// everything overlapping it with IoU above `iou_threshold`, repeat. Output is
/// sorted by confidence, descending.
pub fn nms(proposals: &[Proposal], iou_threshold: f64) -> Vec<Proposal> {
    let mut order: Vec<(usize, &Proposal)> = proposals.iter().enumerate().collect();
    order.sort_by(rank);
    let mut kept: Vec<Proposal> = Vec::new();
    for (_, p) in order {
        if kept.iter().all(|k| interval_iou(k, p) <= iou_threshold) {
            kept.push(*p);
        }
    }
    kept
}
