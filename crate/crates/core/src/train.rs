//! Per-video Adam training of the fusion model.
//!
//! Targets are built once up front (they do not change between epochs).
//! Each epoch visits the videos in dataset order and takes one optimizer
//! step per video. Dropout draws from a generator derived from the seed and
//! the global step, so a run resumed from a checkpoint replays exactly the
//! same stream as an uninterrupted one.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::dataset::Video;
use crate::error::{Error, Result};
use crate::labels::{to_shot_level_annotation, FrameTargets, KtsParams};
use crate::loss::{total_loss, LossBreakdown, LossWeights};
use crate::model::{build_graph, check_params, param_layout, Init, ModelConfig};
use crate::optim::{adam_step, AdamConfig, AdamState, ModelParams, ParamGrads};
use crate::tape::GradTape;
use crate::tensor::Tensor2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub loss: LossWeights,
    pub seed: u64,
    /// Rescale gradients whose global L2 norm exceeds this.
    pub clip_norm: Option<f64>,
    /// Write a checkpoint every this many epochs (the final one is always
    /// written when a path is given).
    pub checkpoint_every: Option<usize>,
    /// Stop after this many epochs without a lower mean loss.
    pub patience: Option<usize>,
    /// Keyshot budget used when building targets.
    pub budget_fraction: f64,
    pub kts: KtsParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            adam: AdamConfig::default(),
            loss: LossWeights::default(),
            seed: 0,
            clip_norm: None,
            checkpoint_every: None,
            patience: None,
            budget_fraction: 0.15,
            kts: KtsParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let a = &self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        if !(a.eps > 0.0) {
            return Err(Error::config("Adam eps must be positive"));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::config("clip_norm must be positive"));
        }
        if self.checkpoint_every == Some(0) || self.patience == Some(0) {
            return Err(Error::config("checkpoint_every and patience must be ≥ 1"));
        }
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return Err(Error::config("budget_fraction must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Xavier-uniform weights, unit layer-norm gains, zero biases.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::new();
    for spec in param_layout(config) {
        let t = match spec.init {
            Init::Zeros => Tensor2::zeros(spec.rows, spec.cols),
            Init::Ones => Tensor2::filled(spec.rows, spec.cols, 1.0),
            Init::Xavier => {
                let bound = spec.init_bound();
                Tensor2::from_fn(spec.rows, spec.cols, |_, _| rng.gen_range(-bound..=bound))
            }
        };
        params.insert(spec.name, t);
    }
    Ok(params)
}

/// Frame targets for every video, built in parallel.
pub fn build_targets(videos: &[&Video], budget_fraction: f64, kts: KtsParams) -> Result<Vec<FrameTargets>> {
    videos
        .par_iter()
        .map(|v| {
            to_shot_level_annotation(&v.user_scores, &v.visual, budget_fraction, kts)
                .map(|a| FrameTargets::from_annotation(&a))
                .map_err(|e| Error::video(&v.id, e.to_string()))
        })
        .collect()
}

/// Mean losses over one epoch's steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub cls: f64,
    pub reg: f64,
    pub center: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<EpochRecord>,
    pub wall_clock_secs: f64,
    pub checkpoint_path: Option<PathBuf>,
    pub stopped_early: bool,
    pub param_count: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl TrainReport {
    pub fn first_loss(&self) -> Option<f64> {
        self.curve.first().map(|r| r.total)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.curve.last().map(|r| r.total)
    }
}

/// Scales `grads` in place to global norm ≤ `max_norm`; returns the norm
/// before clipping.
pub fn clip_global_norm(grads: &mut ParamGrads, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        grads.values_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= k));
    }
    norm
}

fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

struct Sample {
    id: String,
    visual: Tensor2,
    audio: Tensor2,
    targets: FrameTargets,
}

pub struct Trainer {
    model: ModelConfig,
    config: TrainConfig,
    samples: Vec<Sample>,
    params: ModelParams,
    state: AdamState,
    epoch: usize,
    curve: Vec<EpochRecord>,
}

impl Trainer {
    pub fn new(model: ModelConfig, config: TrainConfig, videos: &[&Video]) -> Result<Self> {
        let params = init_params(&model, config.seed)?;
        let state = AdamState::new(config.adam, &params);
        Self::assemble(model, config, videos, params, state, 0)
    }

    /// Continues from a checkpoint written by a run with the same settings.
    pub fn resume(config: TrainConfig, videos: &[&Video], ckpt: Checkpoint) -> Result<Self> {
        let state = match ckpt.adam {
            Some(mut s) => {
                s.config = config.adam;
                s
            }
            None => AdamState::new(config.adam, &ckpt.params),
        };
        Self::assemble(ckpt.meta.model, config, videos, ckpt.params, state, ckpt.meta.epochs)
    }

    fn assemble(
        model: ModelConfig,
        config: TrainConfig,
        videos: &[&Video],
        params: ModelParams,
        state: AdamState,
        epoch: usize,
    ) -> Result<Self> {
        model.validate()?;
        config.validate()?;
        check_params(&params, &model)?;
        if videos.is_empty() {
            return Err(Error::config("training needs at least one video"));
        }
        for v in videos {
            if v.visual.dim() != model.visual_dim || v.audio.dim() != model.audio_dim {
                return Err(Error::video(
                    &v.id,
                    format!(
                        "feature dims {}/{} do not match model {}/{}",
                        v.visual.dim(),
                        v.audio.dim(),
                        model.visual_dim,
                        model.audio_dim
                    ),
                ));
            }
        }
        let targets = build_targets(videos, config.budget_fraction, config.kts)?;
        let samples = videos
            .iter()
            .zip(targets)
            .map(|(v, targets)| Sample {
                id: v.id.clone(),
                visual: v.visual.to_tensor(),
                audio: v.audio.to_tensor(),
                targets,
            })
            .collect();
        Ok(Trainer {
            model,
            config,
            samples,
            params,
            state,
            epoch,
            curve: Vec::new(),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn curve(&self) -> &[EpochRecord] {
        &self.curve
    }

    pub fn targets(&self) -> impl Iterator<Item = (&str, &FrameTargets)> {
        self.samples.iter().map(|s| (s.id.as_str(), &s.targets))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new(self.model.clone(), self.params.clone());
        ckpt.meta.epochs = self.epoch;
        ckpt.meta.run = serde_json::to_value(&self.config).expect("config serializes");
        ckpt.adam = Some(self.state.clone());
        ckpt
    }

    fn step(&mut self, index: usize) -> Result<LossBreakdown> {
        let epoch = self.epoch + 1;
        let sample = &self.samples[index];
        let diverged = |detail: String| Error::Diverged {
            epoch,
            video: sample.id.clone(),
            detail,
        };
        let mut rng = step_rng(self.config.seed, self.state.step);
        let mut tape = GradTape::new();
        let graph = build_graph(
            &mut tape,
            &self.params,
            &self.model,
            &sample.visual,
            &sample.audio,
            Some(&mut rng),
        )?;
        let nodes = total_loss(&mut tape, &graph, &sample.targets, &self.config.loss)?;
        let breakdown = nodes.breakdown(&tape);
        if !breakdown.total.is_finite() {
            return Err(diverged(format!("loss {:?}", breakdown)));
        }
        let mut raw = tape.backward(nodes.total)?;
        let mut grads = ParamGrads::with_capacity(self.params.len());
        for (name, p) in self.params.iter() {
            let g = graph
                .param_nodes
                .get(name)
                .and_then(|&id| raw.take(id))
                .unwrap_or_else(|| Tensor2::zeros(p.rows(), p.cols()));
            if !g.all_finite() {
                return Err(diverged(format!("non-finite gradient for {name}")));
            }
            grads.insert(name.to_string(), g);
        }
        if let Some(max_norm) = self.config.clip_norm {
            clip_global_norm(&mut grads, max_norm);
        }
        adam_step(&mut self.params, &grads, &mut self.state)?;
        if !self.params.all_finite() {
            return Err(diverged("non-finite parameters after update".into()));
        }
        Ok(breakdown)
    }

    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let started = Instant::now();
        let mut sum = LossBreakdown::default();
        for i in 0..self.samples.len() {
            let b = self.step(i)?;
            sum.total += b.total;
            sum.cls += b.cls;
            sum.reg += b.reg;
            sum.center += b.center;
        }
        self.epoch += 1;
        let n = self.samples.len() as f64;
        let record = EpochRecord {
            epoch: self.epoch,
            total: sum.total / n,
            cls: sum.cls / n,
            reg: sum.reg / n,
            center: sum.center / n,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::debug!("epoch {} loss {:.6}", record.epoch, record.total);
        self.curve.push(record.clone());
        Ok(record)
    }

    /// Trains until `config.epochs` epochs are done in total (counting any
    /// resumed ones) or patience runs out.
    pub fn run(
        &mut self,
        checkpoint_path: Option<&Path>,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<TrainReport> {
        let started = Instant::now();
        let mut best = f64::INFINITY;
        let mut since_best = 0;
        let mut stopped_early = false;
        while self.epoch < self.config.epochs {
            let record = self.run_epoch()?;
            on_epoch(&record);
            if let (Some(path), Some(every)) = (checkpoint_path, self.config.checkpoint_every) {
                if self.epoch % every == 0 {
                    save_checkpoint(&self.checkpoint(), path)?;
                }
            }
            if record.total < best {
                best = record.total;
                since_best = 0;
            } else {
                since_best += 1;
            }
            if self.config.patience.is_some_and(|p| since_best >= p) {
                log::info!("no improvement for {since_best} epochs; stopping at {}", self.epoch);
                stopped_early = true;
                break;
            }
        }
        if let Some(path) = checkpoint_path {
            save_checkpoint(&self.checkpoint(), path)?;
        }
        Ok(TrainReport {
            curve: self.curve.clone(),
            wall_clock_secs: started.elapsed().as_secs_f64(),
            checkpoint_path: checkpoint_path.map(Path::to_path_buf),
            stopped_early,
            param_count: self.params.scalar_count(),
            model: self.model.clone(),
            train: self.config.clone(),
        })
    }
}

/// Trains from a fresh initialization without writing checkpoints.
pub fn train(videos: &[&Video], model: &ModelConfig, config: &TrainConfig) -> Result<(ModelParams, TrainReport)> {
    let mut trainer = Trainer::new(model.clone(), config.clone(), videos)?;
    let report = trainer.run(None, |_| {})?;
    Ok((trainer.params, report))
}
