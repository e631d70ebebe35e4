//! Audio-visual video summarization.
//!
//! Visual and audio feature sequences are fused by cross-modal attention and
//! an alignment-masked transformer; per-frame heads predict importance,
//! segment boundaries and center-ness. Predictions are turned into a
//! length-budgeted summary via NMS, KTS shot segmentation and a knapsack.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod gradcheck;
pub mod fixture;
pub mod labels;
pub mod loss;
pub mod model;
pub mod optim;
pub mod postprocess;
pub mod tape;
pub mod tensor;
pub mod train;

pub use dataset::{load_manifest, Dataset, Video};
pub use error::{Error, FormatError, Result};
pub use features::{read_features, write_features, FeatureSequence, Modality};
pub use labels::{FrameTargets, KtsParams, ShotAnnotation};
pub use loss::{LossBreakdown, LossWeights};
pub use model::{forward, FramePredictions, ModelConfig};
pub use optim::{AdamConfig, AdamState, ModelParams};
pub use postprocess::{PostprocessConfig, Summary};
pub use tensor::{Mask, Tensor2};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use eval::{evaluate, fscore, EvalResult, Protocol};
pub use fixture::{gen_synthetic_fixture, FixtureConfig};
pub use train::{init_params, train, TrainConfig, TrainReport, Trainer};
