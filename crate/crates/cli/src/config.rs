//! Run configuration: a TOML file merged with command-line overrides.
//!
//! ```toml
//! [model]
//! d_model = 32
//! n_heads = 4
//!
//! [train]
//! epochs = 300
//! clip_norm = 10.0
//! [train.adam]
//! lr = 1e-3
//!
//! [postprocess]
//! nms_iou = 0.5
//!
//! [eval]
//! protocol = "max"
//! ```
//!
//! Every key is optional. Unknown keys are an error.

use std::path::Path;

use avsumm_core::{FixtureConfig, ModelConfig, PostprocessConfig, Protocol, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub protocol: Protocol,
    /// Evaluate (and exclude from training) only videos in this fold.
    pub test_fold: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub postprocess: PostprocessConfig,
    pub eval: EvalSection,
    pub fixture: FixtureConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            // The command line clips by default; the library does not.
            train: TrainConfig {
                clip_norm: Some(10.0),
                ..TrainConfig::default()
            },
            postprocess: PostprocessConfig::default(),
            eval: EvalSection::default(),
            fixture: FixtureConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run config serializes")
    }
}
