//! Independent reference implementations used as test oracles.
//!
//! Each oracle evaluates its definition directly (exhaustive enumeration,
//! per-element formulas) and shares no code with the library routine it
//! checks.
#![allow(dead_code)]

use avsumm_core::model::AttentionParams;
use avsumm_core::postprocess::Proposal;
use avsumm_core::tensor::{Mask, Tensor2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor2 {
    Tensor2::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

/// Best value and the lexicographically greatest optimal selection, by
/// enumerating all `2^C` subsets in Gray-code order.
///
/// Values are accumulated incrementally, so exact tie-breaking needs
/// integer-valued instances.
pub fn knapsack_brute(values: &[f64], weights: &[usize], budget: usize) -> (f64, Vec<bool>) {
    let n = values.len();
    assert!(n < 32);
    // Reading a selection from item 0 as the most significant bit makes
    // numeric order on the key equal lexicographic order with false < true.
    let key = |mask: u32| if n == 0 { 0 } else { mask.reverse_bits() >> (32 - n) };
    let (mut mask, mut weight, mut value) = (0u32, 0usize, 0.0f64);
    let (mut best_value, mut best_mask) = (0.0f64, 0u32);
    for g in 1u32..(1u32 << n) {
        let h = g.trailing_zeros() as usize;
        mask ^= 1 << h;
        if mask >> h & 1 == 1 {
            weight += weights[h];
            value += values[h];
        } else {
            weight -= weights[h];
            value -= values[h];
        }
        if weight <= budget && (value > best_value || (value == best_value && key(mask) > key(best_mask))) {
            best_value = value;
            best_mask = mask;
        }
    }
    (best_value, (0..n).map(|h| best_mask >> h & 1 == 1).collect())
}

pub fn selection_value(values: &[f64], selected: &[bool]) -> f64 {
    values.iter().zip(selected).filter(|(_, &s)| s).map(|(v, _)| v).sum()
}

fn unit_rows(x: &Tensor2) -> Vec<Vec<f64>> {
    (0..x.rows())
        .map(|r| {
            let row = x.row(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter().map(|v| if norm > 0.0 { v / norm } else { 0.0 }).collect()
        })
        .collect()
}

/// Scatter of `[s, e)` from its definition: squared distances of unit
/// frames to their segment mean.
fn scatter_direct(frames: &[Vec<f64>], s: usize, e: usize) -> f64 {
    let d = frames[0].len();
    let n = (e - s) as f64;
    let mean: Vec<f64> = (0..d)
        .map(|c| frames[s..e].iter().map(|f| f[c]).sum::<f64>() / n)
        .collect();
    frames[s..e]
        .iter()
        .map(|f| f.iter().zip(&mean).map(|(a, m)| (a - m) * (a - m)).sum::<f64>())
        .sum()
}

pub fn segmentation_cost(x: &Tensor2, change_points: &[usize], penalty: f64) -> f64 {
    let frames = unit_rows(x);
    let mut bounds = vec![0];
    bounds.extend_from_slice(change_points);
    bounds.push(x.rows());
    bounds
        .windows(2)
        .map(|w| scatter_direct(&frames, w[0], w[1]) + penalty)
        .sum()
}

/// Minimum-cost change points over every segmentation with at most
/// `max_segments` segments.
pub fn kts_brute(x: &Tensor2, max_segments: usize, penalty: f64) -> (Vec<usize>, f64) {
    let n = x.rows();
    let mut best = (vec![], segmentation_cost(x, &[], penalty));
    let mut stack: Vec<Vec<usize>> = vec![vec![]];
    while let Some(cps) = stack.pop() {
        if cps.len() + 1 >= max_segments {
            continue;
        }
        let from = cps.last().map_or(1, |&c| c + 1);
        for c in from..n {
            let mut next = cps.clone();
            next.push(c);
            let cost = segmentation_cost(x, &next, penalty);
            if cost < best.1 - 1e-12 {
                best = (next.clone(), cost);
            }
            stack.push(next);
        }
    }
    best
}

fn iou(a: &Proposal, b: &Proposal) -> f64 {
    let lo = a.start.max(b.start);
    let hi = a.end.min(b.end);
    let inter = if hi > lo { hi - lo } else { 0.0 };
    let union = (a.end - a.start) + (b.end - b.start) - inter;
    if union > 0.0 {
        inter / union
    } else if a.start == b.start {
        1.0
    } else {
        0.0
    }
}

/// Greedy suppression by repeated full scans for the best survivor.
pub fn nms_naive(proposals: &[Proposal], threshold: f64) -> Vec<Proposal> {
    let mut alive: Vec<bool> = vec![true; proposals.len()];
    let mut kept = Vec::new();
    loop {
        let mut pick: Option<usize> = None;
        for (i, p) in proposals.iter().enumerate() {
            if !alive[i] {
                continue;
            }
            let better = match pick {
                None => true,
                Some(j) => {
                    let q = &proposals[j];
                    p.confidence > q.confidence || (p.confidence == q.confidence && p.start < q.start)
                }
            };
            if better {
                pick = Some(i);
            }
        }
        let Some(i) = pick else { break };
        let chosen = proposals[i];
        kept.push(chosen);
        alive[i] = false;
        for (j, p) in proposals.iter().enumerate() {
            if alive[j] && iou(&chosen, p) > threshold {
                alive[j] = false;
            }
        }
    }
    kept
}

/// One attention head by per-element evaluation:
/// `out[i] = Σ_j softmax_j(q_i·k_j / √d, masked) v_j`.
pub fn attention_head_oracle(q: &Tensor2, k: &Tensor2, v: &Tensor2, mask: Option<&Mask>) -> (Tensor2, Tensor2) {
    let d = q.cols() as f64;
    let (tq, tk) = (q.rows(), k.rows());
    let mut weights = Tensor2::zeros(tq, tk);
    for i in 0..tq {
        let allowed: Vec<usize> = (0..tk).filter(|&j| mask.map_or(true, |m| m.get(i, j))).collect();
        let logits: Vec<f64> = allowed
            .iter()
            .map(|&j| (0..q.cols()).map(|c| q.get(i, c) * k.get(j, c)).sum::<f64>() / d.sqrt())
            .collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - top).exp()).sum();
        for (&j, l) in allowed.iter().zip(&logits) {
            weights.set(i, j, (l - top).exp() / z);
        }
    }
    let out = Tensor2::from_fn(tq, v.cols(), |i, c| (0..tk).map(|j| weights.get(i, j) * v.get(j, c)).sum());
    (out, weights)
}

/// Multi-head attention from the per-head oracle: project, split columns,
/// attend, concatenate, project.
pub fn multi_head_oracle(
    query: &Tensor2,
    source: &Tensor2,
    p: &AttentionParams,
    heads: usize,
    mask: Option<&Mask>,
) -> (Tensor2, Vec<Tensor2>) {
    let q = affine_oracle(query, &p.wq, &p.bq);
    let k = affine_oracle(source, &p.wk, &p.bk);
    let v = affine_oracle(source, &p.wv, &p.bv);
    let dk = q.cols() / heads;
    let mut joined = Tensor2::zeros(query.rows(), q.cols());
    let mut weights = Vec::new();
    for h in 0..heads {
        let cols = |t: &Tensor2| Tensor2::from_fn(t.rows(), dk, |r, c| t.get(r, h * dk + c));
        let (out, w) = attention_head_oracle(&cols(&q), &cols(&k), &cols(&v), mask);
        for r in 0..out.rows() {
            for c in 0..dk {
                joined.set(r, h * dk + c, out.get(r, c));
            }
        }
        weights.push(w);
    }
    (affine_oracle(&joined, &p.wo, &p.bo), weights)
}

/// `x · w + b` by explicit loops.
pub fn affine_oracle(x: &Tensor2, w: &Tensor2, b: &Tensor2) -> Tensor2 {
    Tensor2::from_fn(x.rows(), w.cols(), |r, c| {
        b.get(0, c) + (0..x.cols()).map(|k| x.get(r, k) * w.get(k, c)).sum::<f64>()
    })
}

pub fn max_abs_diff(a: &Tensor2, b: &Tensor2) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Random projection weights for one attention block.
pub fn random_attention(rng: &mut ChaCha8Rng, d: usize) -> AttentionParams {
    let mut m = || random_tensor(rng, d, d, 0.6);
    let (wq, wk, wv, wo) = (m(), m(), m(), m());
    let mut b = || random_tensor(rng, 1, d, 0.2);
    AttentionParams {
        wq,
        bq: b(),
        wk,
        bk: b(),
        wv,
        bv: b(),
        wo,
        bo: b(),
    }
}
