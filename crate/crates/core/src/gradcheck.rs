//! Central finite-difference checks for taped computations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::labels::FrameTargets;
use crate::loss::{total_loss, LossWeights};
use crate::model::{build_graph, ModelConfig};
use crate::optim::ModelParams;
use crate::tape::{GradTape, NodeId};
use crate::tensor::Tensor2;

/// Worst disagreement found by [`check_gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(input, flat index, analytic, numeric)` at the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub entries: usize,
}

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares backward-pass gradients of a scalar function against central
/// differences with step `h`.
///
/// `build` records the function on a fresh tape from leaf nodes holding
/// `inputs` and returns its scalar output.
pub fn check_gradients<F>(inputs: &[Tensor2], h: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut GradTape, &[NodeId]) -> Result<NodeId>,
{
    let eval = |values: &[Tensor2]| -> Result<f64> {
        let mut tape = GradTape::new();
        let leaves: Vec<NodeId> = values.iter().map(|v| tape.constant(v.clone())).collect();
        let out = build(&mut tape, &leaves)?;
        scalar(&tape, out)
    };

    let mut tape = GradTape::new();
    let leaves: Vec<NodeId> = inputs.iter().map(|v| tape.var(v.clone())).collect();
    let out = build(&mut tape, &leaves)?;
    scalar(&tape, out)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        entries: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(*leaf).expect("variable leaf has a gradient");
        for k in 0..inputs[i].len() {
            let x = inputs[i].data()[k];
            probe[i].data_mut()[k] = x + h;
            let up = eval(&probe)?;
            probe[i].data_mut()[k] = x - h;
            let down = eval(&probe)?;
            probe[i].data_mut()[k] = x;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[k];
            let err = relative_error(a, numeric);
            report.entries += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((i, k, a, numeric));
            }
        }
    }
    Ok(report)
}

/// Checks the gradient of the full training loss with respect to every
/// model parameter. Dropout must be 0 so the loss is deterministic.
pub fn check_model_gradients(
    params: &ModelParams,
    config: &ModelConfig,
    visual: &Tensor2,
    audio: &Tensor2,
    targets: &FrameTargets,
    weights: &LossWeights,
    h: f64,
) -> Result<GradCheck> {
    if config.dropout != 0.0 {
        return Err(Error::config("gradient check needs dropout = 0"));
    }
    let loss_at = |p: &ModelParams| -> Result<f64> {
        let mut tape = GradTape::new();
        let graph = build_graph(&mut tape, p, config, visual, audio, None)?;
        let nodes = total_loss(&mut tape, &graph, targets, weights)?;
        scalar(&tape, nodes.total)
    };

    let mut tape = GradTape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let graph = build_graph(&mut tape, params, config, visual, audio, Some(&mut rng))?;
    let nodes = total_loss(&mut tape, &graph, targets, weights)?;
    let grads = tape.backward(nodes.total)?;

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        entries: 0,
    };
    let mut probe = params.clone();
    for (i, (name, value)) in params.iter().enumerate() {
        let analytic = graph
            .param_nodes
            .get(name)
            .and_then(|&id| grads.get(id).cloned())
            .unwrap_or_else(|| Tensor2::zeros(value.rows(), value.cols()));
        for k in 0..value.len() {
            let x = value.data()[k];
            probe.get_mut(name).expect("same layout").data_mut()[k] = x + h;
            let up = loss_at(&probe)?;
            probe.get_mut(name).expect("same layout").data_mut()[k] = x - h;
            let down = loss_at(&probe)?;
            probe.get_mut(name).expect("same layout").data_mut()[k] = x;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[k];
            let err = relative_error(a, numeric);
            report.entries += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((i, k, a, numeric));
            }
        }
    }
    Ok(report)
}

fn scalar(tape: &GradTape, node: NodeId) -> Result<f64> {
    let v = tape.value(node);
    if v.shape() != (1, 1) {
        return Err(Error::contract(format!(
            "gradient check needs a scalar output, got {:?}",
            v.shape()
        )));
    }
    Ok(v.data()[0])
}

/// Reduces `x` to a scalar as `Σ x ⊙ w`, so every output entry carries a
/// distinct weight.
pub fn weighted_sum(tape: &mut GradTape, x: NodeId, weights: &Tensor2) -> Result<NodeId> {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(x, w)?;
    Ok(tape.sum(prod))
}
