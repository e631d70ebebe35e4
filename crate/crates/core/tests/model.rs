mod support;

use avsumm_core::model::{
    aligned_self_attention, build_alignment_mask, cross_modal_attention, forward_tensors,
    param_count, positional_encoding, self_attention, ModelConfig,
};
use avsumm_core::tensor::Tensor2;
use avsumm_core::train::init_params;
use avsumm_core::ModelParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{max_abs_diff, multi_head_oracle, random_attention, random_tensor};

fn small_config() -> ModelConfig {
    ModelConfig {
        visual_dim: 6,
        audio_dim: 4,
        d_model: 8,
        n_heads: 2,
        ffn_dim: 16,
        head_hidden: 8,
        align_window: 1,
        ..ModelConfig::default()
    }
}

fn inputs(seed: u64, frames: usize, config: &ModelConfig) -> (Tensor2, Tensor2) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (
        random_tensor(&mut rng, frames, config.visual_dim, 1.0),
        random_tensor(&mut rng, frames, config.audio_dim, 1.0),
    )
}

#[test]
fn output_shapes_and_ranges() {
    let config = small_config();
    let params = init_params(&config, 1).unwrap();
    let frames = 11;
    let (v, a) = inputs(2, frames, &config);
    let out = forward_tensors(&v, &a, &params, &config).unwrap();
    let p = &out.predictions;
    assert_eq!(p.len(), frames);
    for t in 0..frames {
        assert!(p.scores[t] > 0.0 && p.scores[t] < 1.0);
        assert!(p.left[t] > 0.0 && p.right[t] > 0.0);
        assert!(p.centerness[t] > 0.0 && p.centerness[t] < 1.0);
    }
    for map in &out.attention {
        let side = if map.block.starts_with("fusion") { 2 * frames } else { frames };
        assert_eq!(map.weights.shape(), (side, side), "{}", map.block);
        for r in 0..side {
            let s: f64 = map.weights.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
    // temporal + two cross directions + fusion, each with two heads
    assert_eq!(out.attention.len(), 4 * config.n_heads);
}

#[test]
fn forward_is_deterministic() {
    let config = small_config();
    let params = init_params(&config, 4).unwrap();
    let (v, a) = inputs(5, 9, &config);
    let x = forward_tensors(&v, &a, &params, &config).unwrap();
    let y = forward_tensors(&v, &a, &params, &config).unwrap();
    assert_eq!(x.predictions, y.predictions);
}

#[test]
fn zeroed_heads_give_constant_outputs() {
    let config = small_config();
    let mut params = init_params(&config, 6).unwrap();
    for name in ["head.cls.w2", "head.cls.b2", "head.reg.w2", "head.reg.b2", "head.ctr.w2", "head.ctr.b2"] {
        let t = params.get_mut(name).unwrap();
        let (r, c) = t.shape();
        *t = Tensor2::zeros(r, c);
    }
    let (v, a) = inputs(7, 6, &config);
    let p = forward_tensors(&v, &a, &params, &config).unwrap().predictions;
    for t in 0..6 {
        assert_eq!(p.scores[t], 0.5);
        assert_eq!(p.centerness[t], 0.5);
        assert!((p.left[t] - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((p.right[t] - std::f64::consts::LN_2).abs() < 1e-15);
    }
}

#[test]
fn cross_modal_attention_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for heads in [1, 2, 4] {
        let p = random_attention(&mut rng, 8);
        let target = random_tensor(&mut rng, 5, 8, 1.0);
        let source = random_tensor(&mut rng, 7, 8, 1.0);
        let got = cross_modal_attention(&target, &source, &p, heads).unwrap();
        let (want, weights) = multi_head_oracle(&target, &source, &p, heads, None);
        assert_eq!(got.output.shape(), (5, 8));
        assert!(max_abs_diff(&got.output, &want) < 1e-12);
        for (g, w) in got.weights.iter().zip(&weights) {
            assert!(max_abs_diff(g, w) < 1e-12);
        }
    }
}

#[test]
fn self_attention_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = random_attention(&mut rng, 8);
    let z = random_tensor(&mut rng, 6, 8, 1.0);
    let got = self_attention(&z, &p, 2).unwrap();
    let (want, _) = multi_head_oracle(&z, &z, &p, 2, None);
    assert!(max_abs_diff(&got.output, &want) < 1e-12);
}

#[test]
fn aligned_attention_matches_oracle_with_exact_zeros() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for window in 0..4 {
        let frames = rng.gen_range(2..7);
        let mask = build_alignment_mask(frames, frames, window);
        let p = random_attention(&mut rng, 8);
        let z = random_tensor(&mut rng, 2 * frames, 8, 1.0);
        let got = aligned_self_attention(&z, &mask, &p, 2).unwrap();
        let (want, weights) = multi_head_oracle(&z, &z, &p, 2, Some(&mask));
        assert!(max_abs_diff(&got.output, &want) < 1e-12);
        for (g, w) in got.weights.iter().zip(&weights) {
            assert!(max_abs_diff(g, w) < 1e-12);
            for i in 0..2 * frames {
                for j in 0..2 * frames {
                    if !mask.get(i, j) {
                        assert_eq!(g.get(i, j), 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn fusion_maps_respect_the_alignment_mask() {
    let config = small_config();
    let params = init_params(&config, 11).unwrap();
    let frames = 8;
    let (v, a) = inputs(12, frames, &config);
    let out = forward_tensors(&v, &a, &params, &config).unwrap();
    let fusion: Vec<_> = out.attention.iter().filter(|m| m.block.starts_with("fusion")).collect();
    assert_eq!(fusion.len(), config.n_heads);
    for map in fusion {
        for i in 0..2 * frames {
            for j in 0..2 * frames {
                let same = (i < frames) == (j < frames);
                let allowed = same || (i % frames).abs_diff(j % frames) <= config.align_window;
                if allowed {
                    assert!(map.weights.get(i, j) > 0.0);
                } else {
                    assert_eq!(map.weights.get(i, j), 0.0, "({i},{j})");
                }
            }
        }
    }
}

#[test]
fn window_covering_the_video_equals_unmasked_fusion() {
    let frames = 6;
    let wide = ModelConfig {
        align_window: frames,
        ..small_config()
    };
    let global = ModelConfig {
        align_mask: false,
        ..small_config()
    };
    let params = init_params(&wide, 13).unwrap();
    let (v, a) = inputs(14, frames, &wide);
    let x = forward_tensors(&v, &a, &params, &wide).unwrap().predictions;
    let y = forward_tensors(&v, &a, &params, &global).unwrap().predictions;
    assert_eq!(x, y);
    let narrow = ModelConfig {
        align_window: 0,
        ..small_config()
    };
    let z = forward_tensors(&v, &a, &params, &narrow).unwrap().predictions;
    assert_ne!(x, z);
}

#[test]
fn frame_order_matters() {
    let config = small_config();
    let params = init_params(&config, 15).unwrap();
    let frames = 7;
    let (v, a) = inputs(16, frames, &config);
    let perm: Vec<usize> = (0..frames).rev().collect();
    let permute = |t: &Tensor2| Tensor2::from_fn(t.rows(), t.cols(), |r, c| t.get(perm[r], c));
    let x = forward_tensors(&v, &a, &params, &config).unwrap().predictions;
    let y = forward_tensors(&permute(&v), &permute(&a), &params, &config).unwrap().predictions;
    let diff = (0..frames).map(|t| (x.scores[perm[t]] - y.scores[t]).abs()).fold(0.0, f64::max);
    assert!(diff > 1e-9, "outputs are permutation-equivariant: {diff}");
}

#[test]
fn disabled_audio_ignores_audio_content() {
    let config = ModelConfig {
        use_audio: false,
        ..small_config()
    };
    let params = init_params(&config, 17).unwrap();
    let (v, a) = inputs(18, 5, &config);
    let x = forward_tensors(&v, &a, &params, &config).unwrap().predictions;
    let y = forward_tensors(&v, &Tensor2::zeros(5, 4), &params, &config).unwrap().predictions;
    assert_eq!(x, y);
    assert!(param_count(&config) < param_count(&small_config()));
}

#[test]
fn mismatched_inputs_are_rejected() {
    let config = small_config();
    let params = init_params(&config, 19).unwrap();
    let (v, _) = inputs(20, 5, &config);
    let (_, a) = inputs(20, 6, &config);
    assert!(forward_tensors(&v, &a, &params, &config).is_err());
    assert!(forward_tensors(&Tensor2::zeros(5, 3), &a.slice_rows(0, 5).unwrap(), &params, &config).is_err());
    let wrong = init_params(&ModelConfig { centerness: false, ..config.clone() }, 0).unwrap();
    assert!(forward_tensors(&v, &a.slice_rows(0, 5).unwrap(), &wrong, &config).is_err());
    assert!(forward_tensors(&v, &a.slice_rows(0, 5).unwrap(), &ModelParams::new(), &config).is_err());
}

#[test]
fn positional_table_spot_values() {
    let pe = positional_encoding(50, 16).unwrap();
    for &(pos, c) in &[(0usize, 0usize), (0, 1), (3, 4), (17, 9), (49, 15)] {
        let i = (c / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * i / 16.0);
        let want = if c % 2 == 0 { angle.sin() } else { angle.cos() };
        assert!((pe.get(pos, c) - want).abs() < 1e-12);
    }
    assert!(positional_encoding(4, 7).is_err());
}
