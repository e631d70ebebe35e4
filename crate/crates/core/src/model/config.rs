use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters. Together with the input dimensions they fix
/// every parameter shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_cross_layers: usize,
    pub n_fusion_layers: usize,
    /// Cross-modal attention reaches frames with `|i − j| ≤ align_window`.
    pub align_window: usize,
    /// Applied to residual branches in training only.
    pub dropout: f64,
    pub ffn_dim: usize,
    pub head_hidden: usize,
    pub layer_norm: bool,
    pub feed_forward: bool,
    /// When false the audio stream is all zeros and has no input adapter.
    pub use_audio: bool,
    /// When false fusion attention is global across modalities.
    pub align_mask: bool,
    /// When false there is no center-ness head and `v ≡ 1` at inference.
    pub centerness: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            visual_dim: 1024,
            audio_dim: 1024,
            d_model: 128,
            n_heads: 4,
            n_cross_layers: 1,
            n_fusion_layers: 1,
            align_window: 2,
            dropout: 0.0,
            ffn_dim: 256,
            head_hidden: 64,
            layer_norm: true,
            feed_forward: true,
            use_audio: true,
            align_mask: true,
            centerness: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.visual_dim == 0 || self.audio_dim == 0 {
            return Err(Error::config("input dimensions must be ≥ 1"));
        }
        if self.d_model == 0 || self.n_heads == 0 {
            return Err(Error::config("d_model and n_heads must be ≥ 1"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::config(format!(
                "d_model {} must be even for sinusoidal positions",
                self.d_model
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.feed_forward && self.ffn_dim == 0 {
            return Err(Error::config("ffn_dim must be ≥ 1"));
        }
        if self.head_hidden == 0 {
            return Err(Error::config("head_hidden must be ≥ 1"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}
