//! Seeded inputs shared by the benchmarks.

use avsumm_core::features::{FeatureSequence, Modality};
use avsumm_core::model::ModelConfig;
use avsumm_core::tensor::Tensor2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor2 {
    Tensor2::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Features drifting between a few directions, so KTS has real boundaries.
pub fn scene_features(rng: &mut ChaCha8Rng, frames: usize, dim: usize, scenes: usize) -> FeatureSequence {
    let centers = uniform(rng, scenes, dim);
    let data = (0..frames)
        .flat_map(|t| {
            let s = t * scenes / frames;
            (0..dim).map(|c| (centers.get(s, c) + 0.1 * rng.gen_range(-1.0..1.0)) as f32).collect::<Vec<_>>()
        })
        .collect();
    FeatureSequence::new(Modality::Visual, frames, dim, data).expect("consistent sizes")
}

/// Knapsack items: values in `[0, 1)`, weights in `1..=max_weight`.
pub fn items(rng: &mut ChaCha8Rng, n: usize, max_weight: usize) -> (Vec<f64>, Vec<usize>) {
    let values = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let weights = (0..n).map(|_| rng.gen_range(1..=max_weight)).collect();
    (values, weights)
}

/// The model size used by the fixture-scale experiments.
pub fn fixture_model(visual_dim: usize, audio_dim: usize) -> ModelConfig {
    ModelConfig {
        visual_dim,
        audio_dim,
        d_model: 32,
        n_heads: 4,
        ffn_dim: 64,
        head_hidden: 32,
        ..ModelConfig::default()
    }
}
