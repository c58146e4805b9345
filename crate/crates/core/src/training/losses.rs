//! Differentiable losses built on the graph. The binary cross entropy is the
//! classification loss; squared error and concordance loss cover the two
//! regression tasks and are config-switchable.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

const BCE_CLAMP: f64 = 1e-7;

fn target_node(g: &mut Graph, pred: NodeId, target: &[f64]) -> Result<NodeId> {
    let shape = g.value(pred).shape().to_vec();
    let numel: usize = shape.iter().product();
    if numel != target.len() {
        return Err(Error::InvalidArgument(format!(
            "loss: {} predictions vs {} targets",
            numel,
            target.len()
        )));
    }
    g.constant(Tensor::new(shape, target.to_vec())?)
}

/// `-mean(y ln p + (1-y) ln(1-p))`; predictions are clamped into
/// [1e-7, 1 - 1e-7] first.
pub fn bce_loss(g: &mut Graph, pred: NodeId, target: &[f64]) -> Result<NodeId> {
    if target.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::InvalidArgument(
            "bce: targets must be 0 or 1".into(),
        ));
    }
    let y = target_node(g, pred, target)?;
    let p = g.clamp(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)?;
    let ln_p = g.ln(p)?;
    let pos = g.mul(y, ln_p)?;
    let one_minus_p = g.affine(p, -1.0, 1.0)?;
    let ln_q = g.ln(one_minus_p)?;
    let one_minus_y = g.affine(y, -1.0, 1.0)?;
    let neg = g.mul(one_minus_y, ln_q)?;
    let sum = g.add(pos, neg)?;
    let mean = g.mean_all(sum)?;
    g.scale(mean, -1.0)
}

/// Mean squared error.
pub fn mse_loss(g: &mut Graph, pred: NodeId, target: &[f64]) -> Result<NodeId> {
    let y = target_node(g, pred, target)?;
    let diff = g.sub(pred, y)?;
    let sq = g.mul(diff, diff)?;
    g.mean_all(sq)
}

/// `1 - ccc(pred, target)` with the same population-moment form as the
/// metric. Both-constant inputs fall back to the metric's edge rule as a
/// constant (gradient-free) loss.
pub fn ccc_loss(g: &mut Graph, pred: NodeId, target: &[f64]) -> Result<NodeId> {
    let n = target.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "ccc loss needs n >= 2, got {n}"
        )));
    }
    let pv = g.value(pred).values();
    let pred_constant = pv.iter().all(|&v| v == pv[0]);
    let target_constant = target.iter().all(|&v| v == target[0]);
    if pred_constant && target_constant {
        let edge = if pv[0] == target[0] { 1.0 } else { 0.0 };
        return g.constant(Tensor::scalar(1.0 - edge));
    }

    let y = target_node(g, pred, target)?;
    let mp = g.mean_all(pred)?;
    let mt = g.mean_all(y)?;
    let dp = g.sub(pred, mp)?;
    let dt = g.sub(y, mt)?;
    let cross = g.mul(dp, dt)?;
    let s_pt = g.sum_all(cross)?;
    let pp = g.mul(dp, dp)?;
    let s_pp = g.sum_all(pp)?;
    let tt = g.mul(dt, dt)?;
    let s_tt = g.sum_all(tt)?;
    let d = g.sub(mp, mt)?;
    let d2 = g.mul(d, d)?;
    let nd2 = g.scale(d2, n as f64)?;
    let var_sum = g.add(s_pp, s_tt)?;
    let denom = g.add(var_sum, nd2)?;
    let num = g.scale(s_pt, 2.0)?;
    let ratio = g.div(num, denom)?;
    g.affine(ratio, -1.0, 1.0)
}
