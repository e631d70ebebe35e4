//! Exact 0/1 knapsack over shots.

/// Selects items maximizing total value with total weight ≤ `budget`.
///
/// Among optimal selections, the one that is lexicographically greatest when
/// read as a 0/1 vector from item 0 wins, so lower indices are taken first.
pub fn knapsack(values: &[f64], weights: &[usize], budget: usize) -> Vec<bool> {
    assert_eq!(values.len(), weights.len(), "one weight per value");
    let n = values.len();
    let w = budget + 1;
    // best[h * w + b]: optimal value using items h.. with capacity b.
    let mut best = vec![0.0f64; (n + 1) * w];
    for h in (0..n).rev() {
        for b in 0..=budget {
            let skip = best[(h + 1) * w + b];
            let take = if weights[h] <= b {
                values[h] + best[(h + 1) * w + b - weights[h]]
            } else {
                f64::NEG_INFINITY
            };
            best[h * w + b] = skip.max(take);
        }
    }
    let mut chosen = vec![false; n];
    let mut b = budget;
    for h in 0..n {
        if weights[h] <= b {
            let take = values[h] + best[(h + 1) * w + b - weights[h]];
            if take >= best[(h + 1) * w + b] {
                chosen[h] = true;
                b -= weights[h];
            }
        }
    }
    chosen
}

/// Frames allowed in a summary: `floor(fraction × frames)`.
pub fn budget_frames(fraction: f64, frames: usize) -> usize {
    let raw = (fraction * frames as f64 + 1e-9).floor();
    (raw.max(0.0) as usize).min(frames)
}
