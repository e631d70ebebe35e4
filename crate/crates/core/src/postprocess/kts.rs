//! Kernel temporal segmentation.
//!
//! Frames are unit-normalized and compared with a linear kernel. A
//! segmentation into segments `[s, e)` costs the sum of within-segment
//! scatters plus `penalty` per segment, where
//!
//! ```text
//! scatter(s, e) = Σ_{t∈[s,e)} K(t,t) − (1/(e−s)) Σ_{a,b∈[s,e)} K(a,b)
//! ```
//!
//! Dynamic programming finds the exact minimum over all segmentations with at
//! most `max_segments` segments. Ties prefer fewer segments, then earlier
//! change points.

use crate::features::FeatureSequence;
use crate::tensor::Tensor2;

/// Relative slack under which two objective values count as equal.
const TIE_TOLERANCE: f64 = 1e-9;

/// Default segment cap: one segment per ten frames, rounded up.
pub fn default_max_segments(frames: usize) -> usize {
    frames.div_ceil(10).max(1)
}

/// Rows scaled to unit Euclidean norm; all-zero rows stay zero.
pub fn unit_normalize(x: &Tensor2) -> Tensor2 {
    let mut out = x.clone();
    let cols = x.cols();
    for row in out.data_mut().chunks_mut(cols.max(1)) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// Segment scatter lookups backed by 2-D prefix sums of the Gram matrix.
struct ScatterTable {
    n: usize,
    /// `(n+1) × (n+1)`; `block[i][j] = Σ_{a<i, b<j} K(a,b)`.
    block: Vec<f64>,
    /// `diag[i] = Σ_{a<i} K(a,a)`.
    diag: Vec<f64>,
}

impl ScatterTable {
    fn new(gram: &Tensor2) -> Self {
        let n = gram.rows();
        let w = n + 1;
        let mut block = vec![0.0; w * w];
        for i in 0..n {
            let mut row_acc = 0.0;
            for j in 0..n {
                row_acc += gram.get(i, j);
                block[(i + 1) * w + j + 1] = block[i * w + j + 1] + row_acc;
            }
        }
        let mut diag = vec![0.0; w];
        for i in 0..n {
            diag[i + 1] = diag[i] + gram.get(i, i);
        }
        ScatterTable { n, block, diag }
    }

    fn scatter(&self, s: usize, e: usize) -> f64 {
        let w = self.n + 1;
        let b = |i: usize, j: usize| self.block[i * w + j];
        let within = b(e, e) - b(s, e) - b(e, s) + b(s, s);
        let v = (self.diag[e] - self.diag[s]) - within / (e - s) as f64;
        v.max(0.0)
    }
}

/// Result of a segmentation: change points and the objective they achieve.
#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    /// Indices where a new segment starts, strictly increasing, in `(0, T)`.
    pub change_points: Vec<usize>,
    pub cost: f64,
}

/// Change points for `features` (unit-normalized internally).
pub fn kts_segment(features: &FeatureSequence, max_segments: usize, penalty: f64) -> Vec<usize> {
    kts_segment_tensor(&features.to_tensor(), max_segments, penalty).change_points
}

pub fn kts_segment_tensor(features: &Tensor2, max_segments: usize, penalty: f64) -> Segmentation {
    let n = features.rows();
    if n < 2 || max_segments <= 1 {
        let cost = if n == 0 {
            0.0
        } else {
            let x = unit_normalize(features);
            let gram = x.matmul_t(&x).expect("square gram");
            ScatterTable::new(&gram).scatter(0, n) + penalty
        };
        return Segmentation {
            change_points: vec![],
            cost,
        };
    }
    let x = unit_normalize(features);
    let gram = x.matmul_t(&x).expect("square gram");
    let table = ScatterTable::new(&gram);
    let max_k = max_segments.min(n);
    let w = n + 1;

    // cost[k][e]: best cost of splitting [0, e) into exactly k+1 segments.
    let mut cost = vec![f64::INFINITY; max_k * w];
    let mut back = vec![0usize; max_k * w];
    for e in 1..=n {
        cost[e] = table.scatter(0, e);
    }
    for k in 1..max_k {
        for e in (k + 1)..=n {
            let mut best = f64::INFINITY;
            let mut arg = k;
            for s in k..e {
                let c = cost[(k - 1) * w + s] + table.scatter(s, e);
                if c < best {
                    best = c;
                    arg = s;
                }
            }
            cost[k * w + e] = best;
            back[k * w + e] = arg;
        }
    }

    let mut best_k = 0;
    let mut best = cost[n] + penalty;
    for k in 1..max_k {
        let c = cost[k * w + n] + penalty * (k + 1) as f64;
        if c < best - TIE_TOLERANCE * best.abs().max(1.0) {
            best = c;
            best_k = k;
        }
    }

    let mut change_points = Vec::with_capacity(best_k);
    let mut e = n;
    for k in (1..=best_k).rev() {
        let s = back[k * w + e];
        change_points.push(s);
        e = s;
    }
    change_points.reverse();
    Segmentation {
        change_points,
        cost: best,
    }
}

/// `[start, end)` intervals delimited by `change_points` over `frames` frames.
pub fn segments_from_change_points(change_points: &[usize], frames: usize) -> Vec<(usize, usize)> {
    let mut bounds = Vec::with_capacity(change_points.len() + 2);
    bounds.push(0);
    bounds.extend_from_slice(change_points);
    bounds.push(frames);
    bounds.windows(2).map(|w| (w[0], w[1])).collect()
}
