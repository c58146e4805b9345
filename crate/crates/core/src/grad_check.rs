//! Central-difference gradient verification.
//!
//! The numeric side only ever calls the loss builder, never the backward
//! pass, so it stays an independent oracle for the analytic gradients.

use std::collections::HashMap;

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::kernels::par_map_collect;
use crate::params::{ParamId, ParamStore};

/// Max over all parameter entries of
/// `|analytic - central_difference| / max(1, |central_difference|)`.
///
/// `build_loss` must be deterministic (dropout disabled) and return a scalar
/// node. `eps` is the half-step of the central difference
/// `(f(p+eps) - f(p-eps)) / (2 eps)`.
pub fn grad_check<F>(build_loss: F, params: &ParamStore, eps: f64) -> Result<f64>
where
    F: Fn(&ParamStore, &mut Graph) -> Result<NodeId> + Sync,
{
    assert!(eps > 0.0, "eps must be positive");

    let mut graph = Graph::new();
    let loss = build_loss(params, &mut graph)?;
    graph.backward(loss)?;
    let analytic: HashMap<ParamId, Vec<f64>> = graph.param_grads().into_iter().collect();

    let jobs: Vec<(ParamId, usize)> = params
        .iter()
        .flat_map(|(id, e)| (0..e.tensor.numel()).map(move |j| (id, j)))
        .collect();

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let node = build_loss(store, &mut g)?;
        Ok(g.value(node).item())
    };

    let errors: Vec<Result<f64>> = par_map_collect(&jobs, |&(id, j)| {
        let plus = eval(&params.with_perturbed(id, j, eps)?)?;
        let minus = eval(&params.with_perturbed(id, j, -eps)?)?;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.get(&id).map(|g| g[j]).unwrap_or(0.0);
        Ok((a - numeric).abs() / 1.0f64.max(numeric.abs()))
    });

    let mut max_err: f64 = 0.0;
    for e in errors {
        max_err = max_err.max(e?);
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::Tensor;

    #[test]
    fn linear_function_is_exact() {
        let mut store = ParamStore::new();
        store.add("p", Tensor::new(vec![3], vec![0.3, -1.0, 2.0]).unwrap(), true);
        let err = grad_check(
            |s, g| {
                let p = g.param(s, s.find("p").unwrap())?;
                let scaled = g.scale(p, 4.0)?;
                g.sum_all(scaled)
            },
            &store,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "linear grad check error {err}");
    }

    #[test]
    fn sigmoid_of_linear_map() {
        let mut rng = Rng::new(17);
        let mut store = ParamStore::new();
        store.add("w", Tensor::uniform(&[3, 2], 0.8, &mut rng), true);
        let x = Tensor::uniform(&[4, 3], 1.0, &mut rng);
        let err = grad_check(
            |s, g| {
                let w = g.param(s, s.find("w").unwrap())?;
                let xn = g.input(&x)?;
                let lin = g.matmul(xn, w)?;
                let act = g.sigmoid(lin)?;
                g.sum_all(act)
            },
            &store,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "sigmoid(Wx) grad check error {err}");
    }

    #[test]
    fn composite_with_softmax_and_reductions() {
        let mut rng = Rng::new(29);
        let mut store = ParamStore::new();
        store.add("a", Tensor::uniform(&[4, 4], 0.7, &mut rng), true);
        store.add("b", Tensor::uniform(&[4], 0.7, &mut rng), false);
        let x = Tensor::uniform(&[4, 4], 1.0, &mut rng);
        let err = grad_check(
            |s, g| {
                let a = g.param(s, s.find("a").unwrap())?;
                let b = g.param(s, s.find("b").unwrap())?;
                let xn = g.input(&x)?;
                let h = g.matmul(xn, a)?;
                let h = g.add(h, b)?;
                let sm = g.softmax_last_axis(h)?;
                let t = g.tanh(sm)?;
                let m = g.mean_axis(t, 0, false)?;
                g.sum_all(m)
            },
            &store,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "composite grad check error {err}");
    }
}
