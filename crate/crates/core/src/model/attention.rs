//! Multi-head scaled dot-product attention and the audio-visual alignment
//! mask.

use crate::error::{Error, Result};
use crate::optim::ModelParams;
use crate::tape::{GradTape, NodeId};
use crate::tensor::{Mask, Tensor2};

/// Joint visual+audio mask over a sequence laid out as `[visual; audio]`.
///
/// Within a modality every pair is allowed. Across modalities position `i`
/// may attend to `j` only when their frame indices differ by at most
/// `window`.
pub fn build_alignment_mask(visual_len: usize, audio_len: usize, window: usize) -> Mask {
    let n = visual_len + audio_len;
    let frame = |i: usize| if i < visual_len { i } else { i - visual_len };
    Mask::from_fn(n, n, |i, j| {
        let same_modality = (i < visual_len) == (j < visual_len);
        same_modality || frame(i).abs_diff(frame(j)) <= window
    })
}

/// Q/K/V/output projection weights and biases for one attention block.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub wq: Tensor2,
    pub bq: Tensor2,
    pub wk: Tensor2,
    pub bk: Tensor2,
    pub wv: Tensor2,
    pub bv: Tensor2,
    pub wo: Tensor2,
    pub bo: Tensor2,
}

pub(crate) const ATTENTION_PARTS: [&str; 8] = ["wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"];

impl AttentionParams {
    /// Reads `{prefix}.wq`, `{prefix}.bq`, … from a parameter store.
    pub fn from_model(params: &ModelParams, prefix: &str) -> Result<Self> {
        let get = |part: &str| params.require(&format!("{prefix}.{part}")).cloned();
        Ok(AttentionParams {
            wq: get("wq")?,
            bq: get("bq")?,
            wk: get("wk")?,
            bk: get("bk")?,
            wv: get("wv")?,
            bv: get("bv")?,
            wo: get("wo")?,
            bo: get("bo")?,
        })
    }

    fn parts(&self) -> [&Tensor2; 8] {
        [
            &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo,
        ]
    }
}

/// Tape handles for one attention block's parameters, in `ATTENTION_PARTS`
/// order.
#[derive(Clone, Copy, Debug)]
pub(crate) struct AttentionNodes {
    pub wq: NodeId,
    pub bq: NodeId,
    pub wk: NodeId,
    pub bk: NodeId,
    pub wv: NodeId,
    pub bv: NodeId,
    pub wo: NodeId,
    pub bo: NodeId,
}

impl AttentionNodes {
    pub(crate) fn from_slice(ids: &[NodeId]) -> Self {
        AttentionNodes {
            wq: ids[0],
            bq: ids[1],
            wk: ids[2],
            bk: ids[3],
            wv: ids[4],
            bv: ids[5],
            wo: ids[6],
            bo: ids[7],
        }
    }
}

/// Records multi-head attention of `query` over `key_value` on the tape.
/// Returns the projected output and each head's attention-weight node.
pub(crate) fn attention_on_tape(
    tape: &mut GradTape,
    p: &AttentionNodes,
    query: NodeId,
    key_value: NodeId,
    n_heads: usize,
    mask: Option<&Mask>,
) -> Result<(NodeId, Vec<NodeId>)> {
    let d_model = tape.shape(p.wq).1;
    if n_heads == 0 || d_model % n_heads != 0 {
        return Err(Error::config(format!(
            "d_model {d_model} not divisible into {n_heads} heads"
        )));
    }
    let (tq, tk) = (tape.shape(query).0, tape.shape(key_value).0);
    if let Some(m) = mask {
        if m.shape() != (tq, tk) {
            return Err(Error::Shape {
                op: "attention mask",
                lhs: (tq, tk),
                rhs: m.shape(),
            });
        }
        if let Some(r) = (0..tq).find(|&r| !m.row(r).iter().any(|&b| b)) {
            return Err(Error::contract(format!("attention mask row {r} allows nothing")));
        }
    }
    let project = |tape: &mut GradTape, x, w, b| -> Result<NodeId> {
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    };
    let q = project(tape, query, p.wq, p.bq)?;
    let k = project(tape, key_value, p.wk, p.bk)?;
    let v = project(tape, key_value, p.wv, p.bv)?;

    let dk = d_model / n_heads;
    let inv_sqrt = 1.0 / (dk as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (lo, hi) = (h * dk, (h + 1) * dk);
        let qh = tape.slice_cols(q, lo, hi)?;
        let kh = tape.slice_cols(k, lo, hi)?;
        let vh = tape.slice_cols(v, lo, hi)?;
        let raw = tape.matmul_t(qh, kh)?;
        let mut scores = tape.scale(raw, inv_sqrt);
        if let Some(m) = mask {
            scores = tape.masked_fill(scores, m)?;
        }
        let a = tape.softmax_rows(scores);
        weights.push(a);
        heads.push(tape.matmul(a, vh)?);
    }
    let joined = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)?
    };
    let out = project(tape, joined, p.wo, p.bo)?;
    Ok((out, weights))
}

/// Attention output together with each head's weight matrix.
#[derive(Clone, Debug)]
pub struct AttentionOutput {
    pub output: Tensor2,
    pub weights: Vec<Tensor2>,
}

fn run_standalone(
    query: &Tensor2,
    key_value: Option<&Tensor2>,
    layer: &AttentionParams,
    n_heads: usize,
    mask: Option<&Mask>,
) -> Result<AttentionOutput> {
    let mut tape = GradTape::new();
    let ids: Vec<NodeId> = layer
        .parts()
        .into_iter()
        .map(|t| tape.constant(t.clone()))
        .collect();
    let nodes = AttentionNodes::from_slice(&ids);
    let q = tape.constant(query.clone());
    let kv = match key_value {
        Some(src) => tape.constant(src.clone()),
        None => q,
    };
    let (out, weights) = attention_on_tape(&mut tape, &nodes, q, kv, n_heads, mask)?;
    Ok(AttentionOutput {
        output: tape.value(out).clone(),
        weights: weights.iter().map(|&w| tape.value(w).clone()).collect(),
    })
}

/// Target attends to source: queries from `target`, keys and values from
/// `source`. Output is `target.rows() × d_model`.
pub fn cross_modal_attention(
    target: &Tensor2,
    source: &Tensor2,
    layer: &AttentionParams,
    n_heads: usize,
) -> Result<AttentionOutput> {
    run_standalone(target, Some(source), layer, n_heads, None)
}

/// Unmasked self-attention.
pub fn self_attention(z: &Tensor2, layer: &AttentionParams, n_heads: usize) -> Result<AttentionOutput> {
    run_standalone(z, None, layer, n_heads, None)
}

/// Self-attention restricted to `mask`. Masked-out weights are exactly zero.
pub fn aligned_self_attention(
    z: &Tensor2,
    mask: &Mask,
    layer: &AttentionParams,
    n_heads: usize,
) -> Result<AttentionOutput> {
    run_standalone(z, None, layer, n_heads, Some(mask))
}
