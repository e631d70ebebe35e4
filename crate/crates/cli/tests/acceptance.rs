//! End-to-end acceptance criteria. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use avsumm_core::checkpoint::load_checkpoint;
use avsumm_core::gradcheck::{check_gradients, check_model_gradients, weighted_sum};
use avsumm_core::labels::{compute_centerness, FrameTargets, ShotAnnotation};
use avsumm_core::loss::{tiou, LossWeights};
use avsumm_core::model::{
    aligned_self_attention, build_alignment_mask, forward_tensors, param_count, positional_encoding,
    self_attention, ModelConfig,
};
use avsumm_core::postprocess::{budget_frames, knapsack_select, kts_segment_tensor, nms, Proposal, Shot};
use avsumm_core::tape::{GradTape, NodeId, Unary};
use avsumm_core::tensor::{Mask, Tensor2};
use avsumm_core::train::init_params;
use avsumm_core::{load_manifest, Result as CoreResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use support::{
    kts_brute, knapsack_brute, max_abs_diff, multi_head_oracle, nms_naive, random_attention, random_tensor,
    segmentation_cost, selection_value,
};

type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn criterion(name: &'static str, limit_secs: f64, f: impl FnOnce() -> Check) -> Outcome {
    let started = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = started.elapsed().as_secs_f64();
    let (pass, detail) = match result {
        Ok(d) if secs <= limit_secs => (true, format!("{d}; {secs:.1}s")),
        Ok(d) => (false, format!("{d}; took {secs:.1}s, limit {limit_secs:.0}s")),
        Err(e) => (false, format!("{e}; {secs:.1}s")),
    };
    let outcome = Outcome { name, pass, detail };
    println!(
        "{} {:<22} {}",
        if outcome.pass { "PASS" } else { "FAIL" },
        outcome.name,
        outcome.detail
    );
    outcome
}

// ---------------------------------------------------------------- gradients

type Make = fn(&mut ChaCha8Rng) -> Vec<Tensor2>;
type Op = fn(&mut GradTape, &[NodeId]) -> CoreResult<NodeId>;

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.gen_range(1..=8), rng.gen_range(1..=8))
}

fn one(rng: &mut ChaCha8Rng) -> Vec<Tensor2> {
    let (r, c) = dims(rng);
    vec![random_tensor(rng, r, c, 2.0)]
}

fn two(rng: &mut ChaCha8Rng) -> Vec<Tensor2> {
    let (r, c) = dims(rng);
    vec![random_tensor(rng, r, c, 2.0), random_tensor(rng, r, c, 2.0)]
}

fn away_from_zero(rng: &mut ChaCha8Rng) -> Vec<Tensor2> {
    let (r, c) = dims(rng);
    vec![Tensor2::from_fn(r, c, |_, _| {
        let m = rng.gen_range(0.2..1.5);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })]
}

fn positive(rng: &mut ChaCha8Rng) -> Vec<Tensor2> {
    let (r, c) = dims(rng);
    vec![Tensor2::from_fn(r, c, |_, _| rng.gen_range(0.3..2.0))]
}

fn primitives() -> Vec<(&'static str, Make, Op)> {
    vec![
        (
            "matmul",
            |rng| {
                let (r, k) = dims(rng);
                let c = rng.gen_range(1..=8);
                vec![random_tensor(rng, r, k, 1.0), random_tensor(rng, k, c, 1.0)]
            },
            |t, l| t.matmul(l[0], l[1]),
        ),
        (
            "matmul_t",
            |rng| {
                let (r, k) = dims(rng);
                let c = rng.gen_range(1..=8);
                vec![random_tensor(rng, r, k, 1.0), random_tensor(rng, c, k, 1.0)]
            },
            |t, l| t.matmul_t(l[0], l[1]),
        ),
        ("add", two, |t, l| t.add(l[0], l[1])),
        ("sub", two, |t, l| t.sub(l[0], l[1])),
        ("mul", two, |t, l| t.mul(l[0], l[1])),
        ("min", two, |t, l| t.min(l[0], l[1])),
        ("max", two, |t, l| t.max(l[0], l[1])),
        (
            "div",
            |rng| {
                let mut x = one(rng);
                let (r, c) = x[0].shape();
                let d = Tensor2::from_fn(r, c, |_, _| rng.gen_range(0.3..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 });
                x.push(d);
                x
            },
            |t, l| t.div(l[0], l[1]),
        ),
        ("scale", one, |t, l| Ok(t.scale(l[0], -1.7))),
        ("add_scalar", one, |t, l| Ok(t.add_scalar(l[0], 0.3))),
        (
            "add_row",
            |rng| {
                let (r, c) = dims(rng);
                vec![random_tensor(rng, r, c, 1.0), random_tensor(rng, 1, c, 1.0)]
            },
            |t, l| t.add_row(l[0], l[1]),
        ),
        ("sum", one, |t, l| Ok(t.sum(l[0]))),
        ("softmax_rows", one, |t, l| Ok(t.softmax_rows(l[0]))),
        ("masked_softmax", one, |t, l| {
            let (r, c) = t.shape(l[0]);
            let mask = Mask::from_fn(r, c, |i, j| j == i % c || (i * 7 + j * 3) % 4 != 0);
            let filled = t.masked_fill(l[0], &mask)?;
            Ok(t.softmax_rows(filled))
        }),
        ("sigmoid", one, |t, l| Ok(t.unary(l[0], Unary::Sigmoid))),
        ("softplus", one, |t, l| Ok(t.unary(l[0], Unary::Softplus))),
        ("gelu", one, |t, l| Ok(t.unary(l[0], Unary::Gelu))),
        ("exp", one, |t, l| Ok(t.unary(l[0], Unary::Exp))),
        ("square", one, |t, l| Ok(t.unary(l[0], Unary::Square))),
        ("relu", away_from_zero, |t, l| Ok(t.unary(l[0], Unary::Relu))),
        ("clamp", away_from_zero, |t, l| Ok(t.unary(l[0], Unary::Clamp(-0.9, 0.9)))),
        ("log", positive, |t, l| Ok(t.unary(l[0], Unary::Log))),
        ("sqrt", positive, |t, l| Ok(t.unary(l[0], Unary::Sqrt))),
        ("powf", positive, |t, l| Ok(t.unary(l[0], Unary::Powf(2.5)))),
        (
            "concat_cols",
            |rng| {
                let r = rng.gen_range(1..=8);
                (0..3)
                    .map(|_| {
                        let c = rng.gen_range(1..=3);
                        random_tensor(rng, r, c, 1.0)
                    })
                    .collect()
            },
            |t, l| t.concat_cols(l),
        ),
        (
            "concat_rows",
            |rng| {
                let c = rng.gen_range(1..=8);
                (0..2)
                    .map(|_| {
                        let r = rng.gen_range(1..=4);
                        random_tensor(rng, r, c, 1.0)
                    })
                    .collect()
            },
            |t, l| t.concat_rows(l),
        ),
        ("slice_rows", one, |t, l| {
            let r = t.shape(l[0]).0;
            t.slice_rows(l[0], r / 3, r)
        }),
        ("slice_cols", one, |t, l| {
            let c = t.shape(l[0]).1;
            t.slice_cols(l[0], 0, c.div_ceil(2))
        }),
        (
            "layer_norm",
            |rng| {
                let r = rng.gen_range(1..=8);
                let c = rng.gen_range(2..=8);
                vec![
                    random_tensor(rng, r, c, 2.0),
                    random_tensor(rng, 1, c, 1.5),
                    random_tensor(rng, 1, c, 1.0),
                ]
            },
            |t, l| t.layer_norm(l[0], l[1], l[2], 1e-5),
        ),
    ]
}

fn gradient_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_prim = (0.0f64, "");
    let prims = primitives();
    for (name, make, op) in &prims {
        for _ in 0..50 {
            let inputs = make(&mut rng);
            let mut probe = GradTape::new();
            let leaves: Vec<NodeId> = inputs.iter().map(|t| probe.constant(t.clone())).collect();
            let out = op(&mut probe, &leaves).map_err(|e| format!("{name}: {e}"))?;
            let (r, c) = probe.shape(out);
            let w = random_tensor(&mut rng, r, c, 1.0);
            let g = check_gradients(&inputs, 1e-5, |t, l| {
                let y = op(t, l)?;
                weighted_sum(t, y, &w)
            })
            .map_err(|e| format!("{name}: {e}"))?;
            ensure!(g.max_rel_error < 1e-4, "{name}: rel err {:.2e} at {:?}", g.max_rel_error, g.worst);
            if g.max_rel_error > worst_prim.0 {
                worst_prim = (g.max_rel_error, name);
            }
        }
    }

    let base = ModelConfig {
        visual_dim: 5,
        audio_dim: 3,
        d_model: 8,
        n_heads: 2,
        ffn_dim: 8,
        head_hidden: 4,
        align_window: 1,
        ..ModelConfig::default()
    };
    let targets = FrameTargets::from_annotation(&ShotAnnotation {
        frames: 4,
        shots: vec![(0, 1), (1, 4)],
        keyshot: vec![false, true],
    });
    let visual = random_tensor(&mut rng, 4, 5, 1.0);
    let audio = random_tensor(&mut rng, 4, 3, 1.0);
    let mut worst_model = 0.0f64;
    let mut entries = 0;
    for config in [
        base.clone(),
        ModelConfig { use_audio: false, ..base.clone() },
        ModelConfig { align_mask: false, ..base.clone() },
        ModelConfig { centerness: false, ..base.clone() },
    ] {
        let params = init_params(&config, 2).map_err(|e| e.to_string())?;
        let g = check_model_gradients(&params, &config, &visual, &audio, &targets, &LossWeights::default(), 1e-5)
            .map_err(|e| e.to_string())?;
        ensure!(g.max_rel_error < 1e-3, "end-to-end rel err {:.2e} at {:?}", g.max_rel_error, g.worst);
        worst_model = worst_model.max(g.max_rel_error);
        entries += g.entries;
    }
    Ok(format!(
        "{} primitives x50 shapes, worst {:.1e} ({}); end-to-end {} params, worst {:.1e}",
        prims.len(),
        worst_prim.0,
        worst_prim.1,
        entries,
        worst_model
    ))
}

// --------------------------------------------------------------------- mask

fn mask_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut wide = 0;
    let mut zeros_checked = 0usize;
    for case in 0..200 {
        let tv = rng.gen_range(1..=8);
        let ta = rng.gen_range(1..=8);
        let w = rng.gen_range(0..=9);
        let heads = [1, 2, 4][case % 3];
        let mask = build_alignment_mask(tv, ta, w);
        let p = random_attention(&mut rng, 8);
        let z = random_tensor(&mut rng, tv + ta, 8, 1.0);
        let got = aligned_self_attention(&z, &mask, &p, heads).map_err(|e| e.to_string())?;
        let (want, _) = multi_head_oracle(&z, &z, &p, heads, Some(&mask));
        ensure!(max_abs_diff(&got.output, &want) < 1e-10, "case {case}: output differs from oracle");
        for a in &got.weights {
            for i in 0..tv + ta {
                for j in 0..tv + ta {
                    if !mask.get(i, j) {
                        ensure!(a.get(i, j) == 0.0, "case {case}: weight {} at masked ({i},{j})", a.get(i, j));
                        zeros_checked += 1;
                    }
                }
            }
        }
        if w >= tv.max(ta) {
            wide += 1;
            ensure!(mask.is_all_true(), "case {case}: w ≥ T but mask is not global");
            let free = self_attention(&z, &p, heads).map_err(|e| e.to_string())?;
            ensure!(max_abs_diff(&got.output, &free.output) < 1e-10, "case {case}: w ≥ T differs from unmasked");
        }

        // Same check inside the full network, whose fusion stage sees
        // `tv` visual and `tv` audio positions.
        let config = ModelConfig {
            visual_dim: 3,
            audio_dim: 2,
            d_model: 8,
            n_heads: heads,
            ffn_dim: 8,
            head_hidden: 4,
            align_window: w,
            ..ModelConfig::default()
        };
        let params = init_params(&config, case as u64).map_err(|e| e.to_string())?;
        let v = random_tensor(&mut rng, tv, 3, 1.0);
        let a_in = random_tensor(&mut rng, tv, 2, 1.0);
        let out = forward_tensors(&v, &a_in, &params, &config).map_err(|e| e.to_string())?;
        let joint = build_alignment_mask(tv, tv, w);
        for map in out.attention.iter().filter(|m| m.block.starts_with("fusion")) {
            for i in 0..2 * tv {
                for j in 0..2 * tv {
                    if !joint.get(i, j) {
                        ensure!(map.weights.get(i, j) == 0.0, "case {case}: fusion weight at masked ({i},{j})");
                        zeros_checked += 1;
                    }
                }
            }
        }
        if w >= tv {
            let global = ModelConfig { align_mask: false, ..config.clone() };
            let free = forward_tensors(&v, &a_in, &params, &global).map_err(|e| e.to_string())?;
            let diff = out
                .predictions
                .scores
                .iter()
                .zip(&free.predictions.scores)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            ensure!(diff < 1e-10, "case {case}: network with w ≥ T differs from unmasked by {diff:e}");
        }
    }
    ensure!(wide > 0, "no configuration had w ≥ T");
    Ok(format!("200 configs, {zeros_checked} masked weights exactly 0, {wide} with w ≥ T"))
}

// ----------------------------------------------------------------- oracles

fn dp_knapsack() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut largest = 0;
    for case in 0..500 {
        let c = if case < 20 { 20 } else { rng.gen_range(1..=20) };
        largest = largest.max(c);
        let integer = case % 2 == 0;
        let values: Vec<f64> = (0..c)
            .map(|_| if integer { rng.gen_range(0..5) as f64 } else { rng.gen_range(0.0..1.0) })
            .collect();
        let weights: Vec<usize> = (0..c).map(|_| rng.gen_range(1..=12)).collect();
        let total: usize = weights.iter().sum();
        let budget = rng.gen_range(0..=total);
        let mut start = 0;
        let shots: Vec<Shot> = values
            .iter()
            .zip(&weights)
            .map(|(&importance, &w)| {
                let s = Shot { start, end: start + w, importance };
                start += w;
                s
            })
            .collect();
        let summary = knapsack_select(shots, total, budget);
        let (best, best_sel) = knapsack_brute(&values, &weights, budget);
        let used: usize = weights.iter().zip(&summary.selected).filter(|(_, &s)| s).map(|(w, _)| w).sum();
        ensure!(used <= budget, "case {case}: weight {used} over budget {budget}");
        ensure!(summary.frames_used() == used, "case {case}: mask disagrees with selection");
        let got = selection_value(&values, &summary.selected);
        ensure!((got - best).abs() < 1e-9, "case {case}: value {got} vs optimum {best}");
        if integer {
            ensure!(summary.selected == best_sel, "case {case}: tie-break differs from oracle");
        }
    }
    Ok(format!("500 instances, C ≤ {largest}, exact tie-break on integer-valued half"))
}

fn dp_kts() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut splits = 0;
    for case in 0..500 {
        let t = rng.gen_range(1..=14);
        let d = rng.gen_range(1..=4);
        let max_segments = rng.gen_range(1..=3);
        let penalty = if case % 3 == 0 { 0.0 } else { rng.gen_range(0.0..0.5) };
        let x = if case % 2 == 0 {
            random_tensor(&mut rng, t, d, 1.0)
        } else {
            // Piecewise-constant directions with jitter.
            let cut = rng.gen_range(0..=t);
            let (a, b) = (random_tensor(&mut rng, 1, d, 1.0), random_tensor(&mut rng, 1, d, 1.0));
            let noise = random_tensor(&mut rng, t, d, 0.05);
            Tensor2::from_fn(t, d, |r, c| if r < cut { a.get(0, c) } else { b.get(0, c) } + noise.get(r, c))
        };
        let got = kts_segment_tensor(&x, max_segments, penalty);
        let (_, best) = kts_brute(&x, max_segments, penalty);
        ensure!(got.change_points.len() < max_segments, "case {case}: too many segments");
        ensure!(
            got.change_points.windows(2).all(|w| w[0] < w[1]) && got.change_points.iter().all(|&c| c > 0 && c < t),
            "case {case}: invalid change points {:?}",
            got.change_points
        );
        let achieved = segmentation_cost(&x, &got.change_points, penalty);
        ensure!((achieved - best).abs() < 1e-9, "case {case}: cost {achieved} vs optimum {best}");
        splits += usize::from(!got.change_points.is_empty());
    }
    Ok(format!("500 instances, T ≤ 14, ≤ 3 segments, {splits} with change points"))
}

fn dp_nms() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut kept_total = 0;
    for case in 0..500 {
        let n = rng.gen_range(0..=15);
        let props: Vec<Proposal> = (0..n)
            .map(|frame| {
                let coarse = case % 2 == 0;
                let start = if coarse { rng.gen_range(0..20) as f64 } else { rng.gen_range(0.0..20.0) };
                let len = if coarse { rng.gen_range(0..6) as f64 } else { rng.gen_range(0.0..6.0) };
                let confidence = if coarse { rng.gen_range(0..5) as f64 / 4.0 } else { rng.gen_range(0.0..1.0) };
                Proposal { frame, start, end: start + len, confidence }
            })
            .collect();
        let thr = [0.0, 0.3, 0.5, 0.7, 1.0][case % 5];
        let got = nms(&props, thr);
        ensure!(got == nms_naive(&props, thr), "case {case}: differs from naive greedy");
        kept_total += got.len();
    }
    Ok(format!("500 proposal sets, {kept_total} kept in total"))
}

// ---------------------------------------------------------------- formulas

fn formula_spot_checks() -> Check {
    let c = compute_centerness(1.0, 4.0);
    ensure!((c - 0.5).abs() < 1e-9, "center-ness (1,4) = {c}");
    let s = Tensor2::from_rows(&[vec![std::f64::consts::LN_2, 0.0]]).unwrap().softmax_rows();
    ensure!(
        (s.get(0, 0) - 2.0 / 3.0).abs() < 1e-9 && (s.get(0, 1) - 1.0 / 3.0).abs() < 1e-9,
        "softmax [ln 2, 0] = {:?}",
        s.data()
    );
    let mut tape = GradTape::new();
    let x = tape.constant(Tensor2::from_rows(&[vec![std::f64::consts::LN_2, 0.0]]).unwrap());
    let y = tape.softmax_rows(x);
    ensure!(max_abs_diff(tape.value(y), &s) < 1e-15, "taped softmax differs");
    let u = tiou((1.0, 1.0), (2.0, 2.0));
    ensure!((u - 0.5).abs() < 1e-9, "tIoU (1,1) vs (2,2) = {u}");
    for dim in [2, 8, 64] {
        let pe = positional_encoding(3, dim).map_err(|e| e.to_string())?;
        for col in 0..dim {
            let want = if col % 2 == 0 { 0.0 } else { 1.0 };
            ensure!((pe.get(0, col) - want).abs() < 1e-9, "PE(0,{col}) = {}", pe.get(0, col));
        }
    }
    Ok("center-ness, softmax, tIoU, PE row 0".into())
}

// ------------------------------------------------------------- end to end

const OVERFIT_TOML: &str = "\
[model]
d_model = 32
n_heads = 4
ffn_dim = 64
head_hidden = 32

[train]
epochs = 300
clip_norm = 10.0
[train.adam]
lr = 1e-3
";

fn avsumm(dir: &Path, args: &[&str]) -> std::result::Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_avsumm"))
        .args(args)
        .current_dir(dir)
        .env_remove("AVSUMM_OUTPUT_ROOT")
        .env("RUST_LOG", "error")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "avsumm {} exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

struct Run {
    dir: PathBuf,
    eval_stdout: String,
}

/// Fixture, training, summaries and evaluation under one directory.
fn full_run(dir: &Path) -> std::result::Result<Run, String> {
    std::fs::write(dir.join("overfit.toml"), OVERFIT_TOML).map_err(|e| e.to_string())?;
    avsumm(dir, &["--seed", "7", "gen-fixtures", "--videos", "3", "--frames", "48", "--out", "fx"])?;
    avsumm(dir, &["--config", "overfit.toml", "--seed", "7", "train", "--manifest", "fx", "--out", "run"])?;
    avsumm(
        dir,
        &["--config", "overfit.toml", "summarize", "--manifest", "fx", "--checkpoint", "run/checkpoint.mf2c", "--out", "sum"],
    )?;
    let eval_stdout = avsumm(
        dir,
        &["--config", "overfit.toml", "eval", "--manifest", "fx", "--checkpoint", "run/checkpoint.mf2c", "--protocol", "max"],
    )?;
    Ok(Run { dir: dir.to_path_buf(), eval_stdout })
}

fn jsonl(path: &Path) -> std::result::Result<Vec<Value>, String> {
    std::fs::read_to_string(path)
        .map_err(|e| format!("{}: {e}", path.display()))?
        .lines()
        .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
        .collect()
}

fn overfit(run: &std::result::Result<Run, String>) -> Check {
    let run = run.as_ref().map_err(Clone::clone)?;
    let report: Value = serde_json::from_slice(&std::fs::read(run.dir.join("run/report.json")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let curve = report["report"]["curve"].as_array().ok_or("report has no curve")?;
    ensure!(!curve.is_empty() && curve.len() <= 300, "{} epochs", curve.len());
    let first = curve[0]["total"].as_f64().ok_or("bad first loss")?;
    let last = curve[curve.len() - 1]["total"].as_f64().ok_or("bad last loss")?;
    let ratio = first / last;
    ensure!(ratio >= 10.0, "loss {first:.4} -> {last:.4} is only {ratio:.1}x");

    let line = run
        .eval_stdout
        .lines()
        .find(|l| l.starts_with("dataset F = "))
        .ok_or("eval printed no dataset F")?;
    let f: f64 = line["dataset F = ".len()..].trim().parse().map_err(|_| format!("cannot parse {line:?}"))?;
    ensure!(f >= 0.9, "max-F {f:.4} < 0.9");

    let budget = budget_frames(0.15, 48);
    let records = jsonl(&run.dir.join("sum/summaries.jsonl"))?;
    let summaries: Vec<&Value> = records.iter().filter(|r| r["kind"] == "summary").collect();
    ensure!(summaries.len() == 3, "{} summaries", summaries.len());
    for r in &summaries {
        let used = r["frames_used"].as_u64().unwrap_or(u64::MAX) as usize;
        ensure!(used <= budget, "{} uses {used} frames, budget {budget}", r["video"]);
    }
    Ok(format!(
        "{} epochs, loss {first:.4} -> {last:.5} ({ratio:.0}x), max-F {f:.4}, summaries ≤ {budget} frames",
        curve.len()
    ))
}

fn ablations() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    std::fs::write(dir.join("small.toml"), "[model]\nd_model = 16\nn_heads = 2\nffn_dim = 16\nhead_hidden = 8\n")
        .map_err(|e| e.to_string())?;
    avsumm(dir, &["gen-fixtures", "--videos", "2", "--frames", "20", "--visual-dim", "8", "--audio-dim", "4", "--out", "fx"])?;
    let variants = [("base", None), ("no-audio", Some("--no-audio")), ("no-align", Some("--no-align-mask")), ("no-ctr", Some("--no-centerness"))];
    let mut configs = Vec::new();
    for (name, flag) in variants {
        let mut args = vec!["--config", "small.toml", "train", "--manifest", "fx", "--epochs", "1", "--out", name];
        args.extend(flag);
        avsumm(dir, &args)?;
        let ckpt = load_checkpoint(dir.join(name).join("checkpoint.mf2c")).map_err(|e| e.to_string())?;
        configs.push((ckpt.meta.model.clone(), ckpt.params));
    }
    let counts: Vec<usize> = configs.iter().map(|(m, _)| param_count(m)).collect();
    ensure!(counts[1] < counts[0], "no-audio has {} params vs {}", counts[1], counts[0]);
    ensure!(counts[3] < counts[0], "no-centerness has {} params vs {}", counts[3], counts[0]);
    ensure!(counts[2] == counts[0], "no-align-mask changed the parameter count");

    let dataset = load_manifest(dir.join("fx/dataset.manifest")).map_err(|e| e.to_string())?;
    let video = &dataset.videos()[0];
    let (v, a) = (video.visual.to_tensor(), video.audio.to_tensor());
    let support = |i: usize| -> std::result::Result<(usize, usize), String> {
        let (m, p) = &configs[i];
        let out = forward_tensors(&v, &a, p, m).map_err(|e| e.to_string())?;
        let fusion: Vec<&Tensor2> = out.attention.iter().filter(|x| x.block.starts_with("fusion")).map(|x| &x.weights).collect();
        let zero = fusion.iter().map(|w| w.data().iter().filter(|&&x| x == 0.0).count()).sum();
        Ok((zero, fusion.iter().map(|w| w.len()).sum()))
    };
    let (base_zero, total) = support(0)?;
    let (free_zero, _) = support(2)?;
    let expected = {
        let m = build_alignment_mask(20, 20, configs[0].0.align_window);
        (m.data().len() - m.count_true()) * configs[0].0.n_heads
    };
    ensure!(base_zero == expected, "aligned fusion has {base_zero} zero weights, mask has {expected} blocked");
    ensure!(free_zero == 0, "global fusion has {free_zero} zero weights");

    let (m, p) = &configs[1];
    let silent = forward_tensors(&v, &Tensor2::zeros(a.rows(), a.cols()), p, m).map_err(|e| e.to_string())?;
    let loud = forward_tensors(&v, &a, p, m).map_err(|e| e.to_string())?;
    ensure!(silent.predictions == loud.predictions, "no-audio model reacts to audio content");
    let (m, p) = &configs[3];
    let out = forward_tensors(&v, &a, p, m).map_err(|e| e.to_string())?;
    ensure!(out.predictions.centerness.iter().all(|&c| c == 1.0), "no-centerness does not force v = 1");
    let report: Value = serde_json::from_slice(&std::fs::read(dir.join("no-ctr/report.json")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    ensure!(report["config"]["train"]["loss"]["mu"] == 0.0, "no-centerness keeps mu = {}", report["config"]["train"]["loss"]["mu"]);
    Ok(format!(
        "params base {} / no-audio {} / no-centerness {}; fusion zeros {base_zero} of {total} aligned vs 0 global",
        counts[0], counts[1], counts[3]
    ))
}

fn determinism(a: &std::result::Result<Run, String>) -> Check {
    let a = a.as_ref().map_err(Clone::clone)?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = full_run(tmp.path())?;
    let mut compared = 0;
    for rel in ["run/checkpoint.mf2c", "sum/summaries.jsonl", "fx/dataset.manifest"] {
        let x = std::fs::read(a.dir.join(rel)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.dir.join(rel)).map_err(|e| e.to_string())?;
        ensure!(x == y, "{rel} differs between runs");
        compared += 1;
    }
    for entry in std::fs::read_dir(a.dir.join("sum/curves")).map_err(|e| e.to_string())? {
        let name = entry.map_err(|e| e.to_string())?.file_name();
        let x = std::fs::read(a.dir.join("sum/curves").join(&name)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.dir.join("sum/curves").join(&name)).map_err(|e| e.to_string())?;
        ensure!(x == y, "curve {name:?} differs between runs");
        compared += 1;
    }
    ensure!(a.eval_stdout == b.eval_stdout, "eval output differs");

    // A different seed must change the checkpoint.
    avsumm(
        tmp.path(),
        &["--config", "overfit.toml", "--seed", "8", "train", "--manifest", "fx", "--epochs", "2", "--out", "other"],
    )?;
    avsumm(
        tmp.path(),
        &["--config", "overfit.toml", "--seed", "7", "train", "--manifest", "fx", "--epochs", "2", "--out", "same"],
    )?;
    let other = std::fs::read(tmp.path().join("other/checkpoint.mf2c")).map_err(|e| e.to_string())?;
    let same = std::fs::read(tmp.path().join("same/checkpoint.mf2c")).map_err(|e| e.to_string())?;
    ensure!(other != same, "seed does not affect training");
    Ok(format!("{compared} files byte-identical across two seeded runs"))
}

fn main() {
    println!("acceptance criteria");
    let mut outcomes = vec![
        criterion("gradient-correctness", 60.0, gradient_correctness),
        criterion("mask-correctness", 120.0, mask_correctness),
        criterion("oracle-knapsack", 120.0, dp_knapsack),
        criterion("oracle-kts", 120.0, dp_kts),
        criterion("oracle-nms", 120.0, dp_nms),
        criterion("formula-spot-checks", 10.0, formula_spot_checks),
    ];
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut run = Err("overfit run did not start".to_string());
    outcomes.push(criterion("overfit-fixture", 600.0, || {
        run = full_run(tmp.path());
        overfit(&run)
    }));
    outcomes.push(criterion("ablation-plumbing", 300.0, ablations));
    outcomes.push(criterion("determinism", 600.0, || determinism(&run)));

    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
