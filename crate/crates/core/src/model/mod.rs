//! The audio-visual fusion network.
//!
//! Pipeline for `T` aligned frames:
//!
//! 1. project visual (`T × d_v`) and audio (`T × d_a`) features to `d_model`
//!    and add sinusoidal positions;
//! 2. visual temporal self-attention with a residual, `x = w + v`;
//! 3. bidirectional cross-modal layers (visual attends to audio and audio
//!    attends to visual, in parallel);
//! 4. concatenate both streams along the sequence axis and run fusion
//!    layers under the alignment mask;
//! 5. read the visual positions and apply the importance, boundary and
//!    center-ness heads.
//!
//! Blocks are pre-norm (`x + Attn(LN(x))`, then `x + FFN(LN(x))`); layer norm
//! and feed-forward sublayers can be switched off in [`ModelConfig`].

mod attention;
mod config;
mod positional;

pub use attention::{
    aligned_self_attention, build_alignment_mask, cross_modal_attention, self_attention,
    AttentionOutput, AttentionParams,
};
pub use config::ModelConfig;
pub use positional::positional_encoding;

use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::optim::ModelParams;
use crate::tape::{GradTape, NodeId, Unary};
use crate::tensor::{Mask, Tensor2};
use attention::{attention_on_tape, AttentionNodes, ATTENTION_PARTS};

const LN_EPS: f64 = 1e-5;

/// Per-frame model outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePredictions {
    /// Importance `s_j ∈ (0, 1)`.
    pub scores: Vec<f64>,
    /// Distance to segment start, `δl ≥ 0`, in frames.
    pub left: Vec<f64>,
    /// Distance to segment end, `δr ≥ 0`, in frames.
    pub right: Vec<f64>,
    /// Center-ness `v_j ∈ (0, 1)`.
    pub centerness: Vec<f64>,
}

impl FramePredictions {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// `co_j = s_j × v_j`.
    pub fn confidences(&self) -> Vec<f64> {
        self.scores
            .iter()
            .zip(&self.centerness)
            .map(|(s, v)| s * v)
            .collect()
    }
}

/// How a parameter tensor is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Xavier,
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

impl ParamSpec {
    /// Bound of the initialization distribution (0 for constant inits).
    pub fn init_bound(&self) -> f64 {
        match self.init {
            Init::Xavier => (6.0 / (self.rows + self.cols) as f64).sqrt(),
            Init::Zeros | Init::Ones => 0.0,
        }
    }
}

struct LayoutBuilder<'c> {
    config: &'c ModelConfig,
    specs: Vec<ParamSpec>,
}

impl LayoutBuilder<'_> {
    fn push(&mut self, name: String, rows: usize, cols: usize, init: Init) {
        self.specs.push(ParamSpec {
            name,
            rows,
            cols,
            init,
        });
    }

    fn linear(&mut self, prefix: &str, w: &str, b: &str, fan_in: usize, fan_out: usize) {
        self.push(format!("{prefix}.{w}"), fan_in, fan_out, Init::Xavier);
        self.push(format!("{prefix}.{b}"), 1, fan_out, Init::Zeros);
    }

    fn norm(&mut self, prefix: &str) {
        if self.config.layer_norm {
            let d = self.config.d_model;
            self.push(format!("{prefix}.g"), 1, d, Init::Ones);
            self.push(format!("{prefix}.b"), 1, d, Init::Zeros);
        }
    }

    fn attention(&mut self, prefix: &str) {
        let d = self.config.d_model;
        for pair in ATTENTION_PARTS.chunks(2) {
            self.linear(prefix, pair[0], pair[1], d, d);
        }
    }

    fn feed_forward(&mut self, prefix: &str) {
        if self.config.feed_forward {
            let (d, f) = (self.config.d_model, self.config.ffn_dim);
            self.norm(&format!("{prefix}.ln_ff"));
            self.linear(&format!("{prefix}.ff"), "w1", "b1", d, f);
            self.linear(&format!("{prefix}.ff"), "w2", "b2", f, d);
        }
    }

    fn head(&mut self, prefix: &str, outputs: usize) {
        let (d, h) = (self.config.d_model, self.config.head_hidden);
        self.linear(prefix, "w1", "b1", d, h);
        self.linear(prefix, "w2", "b2", h, outputs);
    }
}

/// Every parameter the network uses, in a fixed order.
pub fn param_layout(config: &ModelConfig) -> Vec<ParamSpec> {
    let d = config.d_model;
    let mut b = LayoutBuilder {
        config,
        specs: Vec::new(),
    };
    b.linear("visual.proj", "w", "b", config.visual_dim, d);
    if config.use_audio {
        b.linear("audio.proj", "w", "b", config.audio_dim, d);
    }
    b.norm("temporal.ln");
    b.attention("temporal.attn");
    for l in 0..config.n_cross_layers {
        for dir in ["v_from_a", "a_from_v"] {
            let p = format!("cross.{l}.{dir}");
            b.norm(&format!("{p}.ln_q"));
            b.norm(&format!("{p}.ln_kv"));
            b.attention(&format!("{p}.attn"));
            b.feed_forward(&p);
        }
    }
    for l in 0..config.n_fusion_layers {
        let p = format!("fusion.{l}");
        b.norm(&format!("{p}.ln"));
        b.attention(&format!("{p}.attn"));
        b.feed_forward(&p);
    }
    b.norm("final_ln");
    b.head("head.cls", 1);
    b.head("head.reg", 2);
    if config.centerness {
        b.head("head.ctr", 1);
    }
    b.specs
}

/// Total number of scalar parameters implied by `config`.
pub fn param_count(config: &ModelConfig) -> usize {
    param_layout(config).iter().map(|s| s.rows * s.cols).sum()
}

/// Checks that `params` holds exactly the tensors `config` requires.
pub fn check_params(params: &ModelParams, config: &ModelConfig) -> Result<()> {
    let layout = param_layout(config);
    for spec in &layout {
        let t = params.get(&spec.name).ok_or_else(|| {
            Error::config(format!("parameters lack {} required by the config", spec.name))
        })?;
        if t.shape() != (spec.rows, spec.cols) {
            return Err(Error::config(format!(
                "parameter {} has shape {:?}, config requires {:?}",
                spec.name,
                t.shape(),
                (spec.rows, spec.cols)
            )));
        }
    }
    if params.len() != layout.len() {
        let extra = params
            .names()
            .find(|n| !layout.iter().any(|s| s.name == *n))
            .unwrap_or("?");
        return Err(Error::config(format!(
            "parameter {extra} is not part of the configured model"
        )));
    }
    Ok(())
}

/// Handle to one head's attention weights inside a recorded graph.
#[derive(Clone, Debug)]
pub struct AttentionTrace {
    pub block: String,
    pub head: usize,
    pub weights: NodeId,
    pub mask: Option<Mask>,
}

/// Output nodes of a recorded forward pass.
pub struct ForwardGraph {
    /// `T × 1`, post-sigmoid.
    pub scores: NodeId,
    /// `T × 2` (`δl`, `δr`), post-softplus.
    pub offsets: NodeId,
    /// `T × 1`, post-sigmoid; absent when the center-ness head is disabled.
    pub centerness: Option<NodeId>,
    /// Parameter name → leaf node.
    pub param_nodes: IndexMap<String, NodeId>,
    pub attention: Vec<AttentionTrace>,
    pub frames: usize,
}

impl ForwardGraph {
    pub fn predictions(&self, tape: &GradTape) -> FramePredictions {
        let scores = tape.value(self.scores).data().to_vec();
        let offsets = tape.value(self.offsets);
        let left = (0..self.frames).map(|t| offsets.get(t, 0)).collect();
        let right = (0..self.frames).map(|t| offsets.get(t, 1)).collect();
        let centerness = match self.centerness {
            Some(id) => tape.value(id).data().to_vec(),
            None => vec![1.0; self.frames],
        };
        FramePredictions {
            scores,
            left,
            right,
            centerness,
        }
    }
}

struct Builder<'a> {
    tape: &'a mut GradTape,
    params: &'a ModelParams,
    config: &'a ModelConfig,
    train_rng: Option<&'a mut ChaCha8Rng>,
    nodes: IndexMap<String, NodeId>,
    attention: Vec<AttentionTrace>,
}

impl Builder<'_> {
    fn param(&mut self, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.nodes.get(name) {
            return Ok(id);
        }
        let value = self.params.require(name)?.clone();
        let id = if self.train_rng.is_some() {
            self.tape.var(value)
        } else {
            self.tape.constant(value)
        };
        self.nodes.insert(name.to_string(), id);
        Ok(id)
    }

    fn linear(&mut self, x: NodeId, prefix: &str, w: &str, b: &str) -> Result<NodeId> {
        let w = self.param(&format!("{prefix}.{w}"))?;
        let b = self.param(&format!("{prefix}.{b}"))?;
        let xw = self.tape.matmul(x, w)?;
        self.tape.add_row(xw, b)
    }

    fn norm(&mut self, x: NodeId, prefix: &str) -> Result<NodeId> {
        if !self.config.layer_norm {
            return Ok(x);
        }
        let g = self.param(&format!("{prefix}.g"))?;
        let b = self.param(&format!("{prefix}.b"))?;
        self.tape.layer_norm(x, g, b, LN_EPS)
    }

    fn dropout(&mut self, x: NodeId) -> Result<NodeId> {
        let rate = self.config.dropout;
        let Some(rng) = self.train_rng.as_deref_mut() else {
            return Ok(x);
        };
        if rate <= 0.0 {
            return Ok(x);
        }
        let (r, c) = self.tape.shape(x);
        let keep = 1.0 / (1.0 - rate);
        let mask = Tensor2::from_fn(r, c, |_, _| if rng.gen::<f64>() < rate { 0.0 } else { keep });
        let m = self.tape.constant(mask);
        self.tape.mul(x, m)
    }

    fn attention(
        &mut self,
        prefix: &str,
        query: NodeId,
        key_value: NodeId,
        mask: Option<&Mask>,
    ) -> Result<NodeId> {
        let ids = ATTENTION_PARTS
            .iter()
            .map(|part| self.param(&format!("{prefix}.{part}")))
            .collect::<Result<Vec<_>>>()?;
        let nodes = AttentionNodes::from_slice(&ids);
        let (out, weights) = attention_on_tape(
            self.tape,
            &nodes,
            query,
            key_value,
            self.config.n_heads,
            mask,
        )?;
        for (head, w) in weights.into_iter().enumerate() {
            self.attention.push(AttentionTrace {
                block: prefix.to_string(),
                head,
                weights: w,
                mask: mask.cloned(),
            });
        }
        Ok(out)
    }

    fn feed_forward(&mut self, x: NodeId, prefix: &str) -> Result<NodeId> {
        if !self.config.feed_forward {
            return Ok(x);
        }
        let normed = self.norm(x, &format!("{prefix}.ln_ff"))?;
        let ff = format!("{prefix}.ff");
        let h = self.linear(normed, &ff, "w1", "b1")?;
        let h = self.tape.unary(h, Unary::Gelu);
        let out = self.linear(h, &ff, "w2", "b2")?;
        let out = self.dropout(out)?;
        self.tape.add(x, out)
    }

    fn head(&mut self, x: NodeId, prefix: &str, activation: Unary) -> Result<NodeId> {
        let h = self.linear(x, prefix, "w1", "b1")?;
        let h = self.tape.unary(h, Unary::Gelu);
        let out = self.linear(h, prefix, "w2", "b2")?;
        Ok(self.tape.unary(out, activation))
    }
}

/// Records the full network on `tape`.
///
/// With `train_rng` set, parameters become differentiable leaves and dropout
/// draws from the generator. Without it the pass is deterministic and records
/// parameters as constants.
pub fn build_graph(
    tape: &mut GradTape,
    params: &ModelParams,
    config: &ModelConfig,
    visual: &Tensor2,
    audio: &Tensor2,
    train_rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardGraph> {
    config.validate()?;
    check_params(params, config)?;
    let frames = visual.rows();
    if frames == 0 {
        return Err(Error::contract("forward needs at least one frame"));
    }
    if audio.rows() != frames {
        return Err(Error::contract(format!(
            "visual has {frames} frames but audio has {}",
            audio.rows()
        )));
    }
    if visual.cols() != config.visual_dim {
        return Err(Error::Shape {
            op: "visual input",
            lhs: visual.shape(),
            rhs: (frames, config.visual_dim),
        });
    }
    if config.use_audio && audio.cols() != config.audio_dim {
        return Err(Error::Shape {
            op: "audio input",
            lhs: audio.shape(),
            rhs: (frames, config.audio_dim),
        });
    }

    let mut b = Builder {
        tape,
        params,
        config,
        train_rng,
        nodes: IndexMap::new(),
        attention: Vec::new(),
    };
    let pe = b.tape.constant(positional_encoding(frames, config.d_model)?);

    let v_in = b.tape.constant(visual.clone());
    let v_proj = b.linear(v_in, "visual.proj", "w", "b")?;
    let mut xv = b.tape.add(v_proj, pe)?;

    let mut xa = if config.use_audio {
        let a_in = b.tape.constant(audio.clone());
        let a_proj = b.linear(a_in, "audio.proj", "w", "b")?;
        b.tape.add(a_proj, pe)?
    } else {
        // Zero audio stream: only the positions remain.
        pe
    };

    // Visual temporal modeling: x = w + v.
    let normed = b.norm(xv, "temporal.ln")?;
    let w = b.attention("temporal.attn", normed, normed, None)?;
    let w = b.dropout(w)?;
    xv = b.tape.add(w, xv)?;

    for l in 0..config.n_cross_layers {
        let mut next = [xv, xa];
        for (i, (dir, q, kv)) in [("v_from_a", xv, xa), ("a_from_v", xa, xv)]
            .into_iter()
            .enumerate()
        {
            let p = format!("cross.{l}.{dir}");
            let qn = b.norm(q, &format!("{p}.ln_q"))?;
            let kvn = b.norm(kv, &format!("{p}.ln_kv"))?;
            let att = b.attention(&format!("{p}.attn"), qn, kvn, None)?;
            let att = b.dropout(att)?;
            let x = b.tape.add(q, att)?;
            next[i] = b.feed_forward(x, &p)?;
        }
        [xv, xa] = next;
    }

    let mut z = b.tape.concat_rows(&[xv, xa])?;
    let mask = if config.align_mask {
        build_alignment_mask(frames, frames, config.align_window)
    } else {
        Mask::all(2 * frames, 2 * frames)
    };
    for l in 0..config.n_fusion_layers {
        let p = format!("fusion.{l}");
        let zn = b.norm(z, &format!("{p}.ln"))?;
        let att = b.attention(&format!("{p}.attn"), zn, zn, Some(&mask))?;
        let att = b.dropout(att)?;
        z = b.tape.add(z, att)?;
        z = b.feed_forward(z, &p)?;
    }

    let visual_out = b.tape.slice_rows(z, 0, frames)?;
    let h = b.norm(visual_out, "final_ln")?;
    let scores = b.head(h, "head.cls", Unary::Sigmoid)?;
    let offsets = b.head(h, "head.reg", Unary::Softplus)?;
    let centerness = if config.centerness {
        Some(b.head(h, "head.ctr", Unary::Sigmoid)?)
    } else {
        None
    };
    Ok(ForwardGraph {
        scores,
        offsets,
        centerness,
        param_nodes: b.nodes,
        attention: b.attention,
        frames,
    })
}

/// One head's attention weights from an evaluated forward pass.
#[derive(Clone, Debug)]
pub struct AttentionMap {
    pub block: String,
    pub head: usize,
    pub weights: Tensor2,
    pub mask: Option<Mask>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub predictions: FramePredictions,
    pub attention: Vec<AttentionMap>,
}

/// Deterministic inference pass.
pub fn forward(
    visual: &FeatureSequence,
    audio: &FeatureSequence,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<ForwardOutput> {
    if visual.frames() != audio.frames() {
        return Err(Error::contract(format!(
            "visual has {} frames but audio has {}",
            visual.frames(),
            audio.frames()
        )));
    }
    forward_tensors(&visual.to_tensor(), &audio.to_tensor(), params, config)
}

pub fn forward_tensors(
    visual: &Tensor2,
    audio: &Tensor2,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<ForwardOutput> {
    let mut tape = GradTape::new();
    let graph = build_graph(&mut tape, params, config, visual, audio, None)?;
    let attention = graph
        .attention
        .iter()
        .map(|t| AttentionMap {
            block: t.block.clone(),
            head: t.head,
            weights: tape.value(t.weights).clone(),
            mask: t.mask.clone(),
        })
        .collect();
    Ok(ForwardOutput {
        predictions: graph.predictions(&tape),
        attention,
    })
}
