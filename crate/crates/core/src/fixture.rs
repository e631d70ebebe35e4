//! Synthetic datasets with planted, recoverable structure.
//!
//! Each video is a sequence of scenes. Every scene has its own random mean
//! direction in both modalities plus small Gaussian jitter, so KTS recovers
//! the scene boundaries. One to three scenes are "events": users score them
//! high, each event at a distinct level, while background frames score low.
//! Background scenes are kept longer than the 15% budget whenever the frame
//! count allows, so the keyshot under that budget is the top event.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{write_manifest, Manifest, ManifestEntry, MANIFEST_FILE_NAME, MANIFEST_FORMAT, MANIFEST_VERSION};
use crate::error::{Error, Result};
use crate::features::{write_features, FeatureSequence, Modality};
use crate::postprocess::{budget_frames, default_max_segments};

/// Score levels for events, highest first.
const EVENT_LEVELS: [f64; 3] = [0.9, 0.7, 0.5];
const BACKGROUND_LEVEL: f64 = 0.1;
const SCORE_JITTER: f64 = 0.05;
const PICK_STRIDE: usize = 15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixtureConfig {
    pub videos: usize,
    pub frames: usize,
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub seed: u64,
    pub users: usize,
    pub fps: f64,
    /// Norm of the per-frame feature jitter relative to the unit scene mean.
    pub noise: f64,
    pub folds: usize,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            videos: 3,
            frames: 48,
            visual_dim: 64,
            audio_dim: 32,
            seed: 0,
            users: 5,
            fps: 2.0,
            noise: 0.1,
            folds: 5,
        }
    }
}

impl FixtureConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("videos", self.videos),
            ("frames", self.frames),
            ("visual_dim", self.visual_dim),
            ("audio_dim", self.audio_dim),
            ("users", self.users),
            ("folds", self.folds),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("fixture {name} must be ≥ 1")));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::config("fixture fps must be positive"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("fixture noise must be ≥ 0"));
        }
        Ok(())
    }
}

/// A scene `[start, end)`; `level` is set for events.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedScene {
    pub start: usize,
    pub end: usize,
    pub level: Option<f64>,
}

impl PlantedScene {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn is_event(&self) -> bool {
        self.level.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoPlan {
    pub id: String,
    pub frames: usize,
    pub scenes: Vec<PlantedScene>,
}

impl VideoPlan {
    pub fn events(&self) -> impl Iterator<Item = &PlantedScene> {
        self.scenes.iter().filter(|s| s.is_event())
    }

    /// The event with the highest score level.
    pub fn top_event(&self) -> Option<&PlantedScene> {
        self.events()
            .max_by(|a, b| a.level.partial_cmp(&b.level).expect("finite levels"))
    }

    fn check(&self) -> Result<()> {
        let mut cursor = 0;
        for s in &self.scenes {
            if s.start != cursor || s.end <= s.start {
                return Err(Error::config(format!(
                    "{}: scenes must partition [0, {}) without gaps",
                    self.id, self.frames
                )));
            }
            if s.level.is_some_and(|l| !(0.0..=1.0).contains(&l)) {
                return Err(Error::config(format!("{}: event level outside [0, 1]", self.id)));
            }
            cursor = s.end;
        }
        if cursor != self.frames {
            return Err(Error::config(format!(
                "{}: scenes cover {cursor} of {} frames",
                self.id, self.frames
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Fixture {
    pub manifest_path: PathBuf,
    pub plans: Vec<VideoPlan>,
}

/// Splits `total` into `parts` lengths that differ by at most one, larger
/// parts first.
fn even_split(total: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|i| total / parts + usize::from(i < total % parts))
        .collect()
}

/// Draws a scene layout for one video.
pub fn plan_video(id: impl Into<String>, frames: usize, rng: &mut ChaCha8Rng) -> VideoPlan {
    let id = id.into();
    if frames < 3 {
        return VideoPlan {
            id,
            frames,
            scenes: vec![PlantedScene {
                start: 0,
                end: frames,
                level: Some(EVENT_LEVELS[0]),
            }],
        };
    }
    let scenes_total = default_max_segments(frames).max(3);
    let budget = budget_frames(0.15, frames).max(1);
    let max_events = ((scenes_total - 1) / 2).clamp(1, 3);
    let n_events = rng.gen_range(1..=max_events);
    let min_len = (2 * budget).div_ceil(3).max(1);

    let mut event_lens: Vec<usize> = (0..n_events).map(|_| rng.gen_range(min_len..=budget)).collect();
    let n_background = scenes_total - n_events;
    // Shrink events if the background would otherwise not fit at one frame
    // per scene.
    while event_lens.iter().sum::<usize>() + n_background > frames {
        let longest = event_lens.iter_mut().max().expect("at least one event");
        if *longest == 1 {
            break;
        }
        *longest -= 1;
    }
    let background_lens = even_split(frames - event_lens.iter().sum::<usize>(), n_background);

    // Events sit in distinct odd slots so none touches another.
    let mut odd_slots: Vec<usize> = (0..scenes_total).filter(|i| i % 2 == 1).collect();
    odd_slots.shuffle(rng);
    let mut event_slots: Vec<usize> = odd_slots.into_iter().take(n_events).collect();
    event_slots.sort_unstable();
    let mut levels = EVENT_LEVELS[..n_events].to_vec();
    levels.shuffle(rng);

    let mut scenes = Vec::with_capacity(scenes_total);
    let (mut start, mut ev, mut bg) = (0, 0, 0);
    for slot in 0..scenes_total {
        let (len, level) = if event_slots.contains(&slot) {
            ev += 1;
            (event_lens[ev - 1], Some(levels[ev - 1]))
        } else {
            bg += 1;
            (background_lens[bg - 1], None)
        };
        scenes.push(PlantedScene {
            start,
            end: start + len,
            level,
        });
        start += len;
    }
    VideoPlan { id, frames, scenes }
}

fn unit_direction(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn scene_features(
    plan: &VideoPlan,
    modality: Modality,
    dim: usize,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> Result<FeatureSequence> {
    let jitter = Normal::new(0.0, noise / (dim as f64).sqrt()).expect("finite noise");
    let mut data = Vec::with_capacity(plan.frames * dim);
    for scene in &plan.scenes {
        let mean = unit_direction(dim, rng);
        for _ in scene.start..scene.end {
            data.extend(mean.iter().map(|m| (m + jitter.sample(rng)) as f32));
        }
    }
    FeatureSequence::new(modality, plan.frames, dim, data)
}

fn user_scores(plan: &VideoPlan, users: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..users)
        .map(|_| {
            plan.scenes
                .iter()
                .flat_map(|s| {
                    let base = s.level.unwrap_or(BACKGROUND_LEVEL);
                    (s.start..s.end).map(move |_| base)
                })
                .map(|base| (base + rng.gen_range(-SCORE_JITTER..=SCORE_JITTER)).clamp(0.0, 1.0))
                .collect()
        })
        .collect()
}

/// Writes features and a manifest for explicit plans into `dir`.
pub fn write_fixture(dir: impl AsRef<Path>, config: &FixtureConfig, plans: &[VideoPlan]) -> Result<Fixture> {
    config.validate()?;
    for plan in plans {
        plan.check()?;
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    // Each video draws from its own stream so plans can be edited without
    // perturbing the others.
    let mut entries = Vec::with_capacity(plans.len());
    for (i, plan) in plans.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1 + i as u64);
        let visual = scene_features(plan, Modality::Visual, config.visual_dim, config.noise, &mut rng)?;
        let audio = scene_features(plan, Modality::Audio, config.audio_dim, config.noise, &mut rng)?;
        let scores = user_scores(plan, config.users, &mut rng);
        let visual_name = PathBuf::from(format!("{}.visual.mf2f", plan.id));
        let audio_name = PathBuf::from(format!("{}.audio.mf2f", plan.id));
        write_features(&visual, dir.join(&visual_name))?;
        write_features(&audio, dir.join(&audio_name))?;
        entries.push(ManifestEntry {
            id: plan.id.clone(),
            visual: visual_name,
            audio: audio_name,
            fps: config.fps,
            n_frames: plan.frames,
            fold: i % config.folds,
            user_scores: scores,
            picks: Some((0..plan.frames).map(|t| t * PICK_STRIDE).collect()),
        });
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        name: format!("synthetic-seed{}", config.seed),
        videos: entries,
    };
    let manifest_path = dir.join(MANIFEST_FILE_NAME);
    write_manifest(&manifest, &manifest_path)?;
    Ok(Fixture {
        manifest_path,
        plans: plans.to_vec(),
    })
}

/// Random plans for every video in `config`, deterministic per seed.
pub fn plan_fixture(config: &FixtureConfig) -> Vec<VideoPlan> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.videos)
        .map(|i| plan_video(format!("video_{i:03}"), config.frames, &mut rng))
        .collect()
}

pub fn generate(dir: impl AsRef<Path>, config: &FixtureConfig) -> Result<Fixture> {
    config.validate()?;
    write_fixture(dir, config, &plan_fixture(config))
}

pub fn gen_synthetic_fixture(
    dir: impl AsRef<Path>,
    n_videos: usize,
    frames: usize,
    visual_dim: usize,
    audio_dim: usize,
    seed: u64,
) -> Result<Fixture> {
    let config = FixtureConfig {
        videos: n_videos,
        frames,
        visual_dim,
        audio_dim,
        seed,
        ..FixtureConfig::default()
    };
    generate(dir, &config)
}
