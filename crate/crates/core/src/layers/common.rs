use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::layers::Mode;
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// y = xW + b.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = store.add(
            format!("{name}.weight"),
            Tensor::uniform(&[in_dim, out_dim], bound, rng),
            true,
        );
        let b = store.add(
            format!("{name}.bias"),
            Tensor::uniform(&[out_dim], bound, rng),
            false,
        );
        Linear {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, store: &ParamStore, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.w)?;
        let b = g.param(store, self.b)?;
        let xw = g.matmul(x, w)?;
        g.add(xw, b)
    }
}

/// Per-feature normalization over the last axis, then gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::filled(&[dim], 1.0), false);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[dim]), false);
        LayerNorm {
            gain,
            bias,
            dim,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, store: &ParamStore, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let rank = g.value(x).rank();
        let mean = g.mean_axis(x, rank - 1, true)?;
        let centered = g.sub(x, mean)?;
        let sq = g.mul(centered, centered)?;
        let var = g.mean_axis(sq, rank - 1, true)?;
        let var_eps = g.affine(var, 1.0, self.eps)?;
        let std = g.sqrt(var_eps)?;
        let normed = g.div(centered, std)?;
        let gain = g.param(store, self.gain)?;
        let bias = g.param(store, self.bias)?;
        let scaled = g.mul(normed, gain)?;
        g.add(scaled, bias)
    }
}

/// Inverted dropout: at train time entries are zeroed with probability `rate`
/// and survivors scaled by 1/(1-rate), so the expected output equals the
/// input. Identity in eval mode.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        Ok(Dropout { rate })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        x: NodeId,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<NodeId> {
        if mode == Mode::Eval || self.rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let shape = g.value(x).shape().to_vec();
        let numel = g.value(x).numel();
        let mask: Vec<f64> = (0..numel)
            .map(|_| if rng.uniform() < self.rate { 0.0 } else { scale })
            .collect();
        let mask = g.constant(Tensor::new(shape, mask)?)?;
        g.mul(x, mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad_check::grad_check;

    #[test]
    fn linear_identity_plus_bias() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(0);
        let mut lin = Linear::new(&mut store, "lin", 2, 2, &mut rng);
        // overwrite with identity weight and ones bias
        store.get_mut(lin.w).apply_update(|i, v| {
            *v = if i % 3 == 0 { 1.0 } else { 0.0 }; // [[1,0],[0,1]] row-major
        });
        store.get_mut(lin.b).apply_update(|_, v| *v = 1.0);
        lin.in_dim = 2;
        let mut g = Graph::new();
        let x = g.input(&Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap()).unwrap();
        let y = lin.forward(&store, &mut g, x).unwrap();
        assert_eq!(g.value(y).values(), &[2.0, 3.0]);
    }

    #[test]
    fn layer_norm_constant_vector_maps_to_bias() {
        let mut store = ParamStore::new();
        let ln = LayerNorm::new(&mut store, "ln", 4);
        let mut g = Graph::new();
        let x = g.input(&Tensor::filled(&[2, 4], 3.7)).unwrap();
        let y = ln.forward(&store, &mut g, x).unwrap();
        // centered input is exactly zero, so output is gain*0 + bias = 0
        for v in g.value(y).values() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_zero_mean_unit_var() {
        let mut store = ParamStore::new();
        let ln = LayerNorm::new(&mut store, "ln", 8);
        let mut rng = Rng::new(9);
        let mut g = Graph::new();
        let x = g.input(&Tensor::uniform(&[3, 8], 5.0, &mut rng)).unwrap();
        let y = ln.forward(&store, &mut g, x).unwrap();
        for row in 0..3 {
            let r = g.value(y).row(row);
            let mean: f64 = r.iter().sum::<f64>() / 8.0;
            let var: f64 = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-9, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn layer_norm_grad_check() {
        let mut store = ParamStore::new();
        let ln = LayerNorm::new(&mut store, "ln", 5);
        let mut rng = Rng::new(10);
        // move gain/bias off their init so their gradients are informative
        store.get_mut(ln.gain).apply_update(|i, v| *v = 1.0 + 0.1 * i as f64);
        store.get_mut(ln.bias).apply_update(|i, v| *v = 0.05 * i as f64);
        let x = Tensor::uniform(&[3, 5], 2.0, &mut rng);
        let err = grad_check(
            |s, g| {
                let xn = g.input(&x)?;
                let y = ln.forward(s, g, xn)?;
                let sq = g.mul(y, y)?;
                g.sum_all(sq)
            },
            &store,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-3, "layer norm grad error {err}");
    }

    #[test]
    fn dropout_rate_validation() {
        assert!(Dropout::new(1.0).is_err());
        assert!(Dropout::new(-0.1).is_err());
        assert!(Dropout::new(0.0).is_ok());
    }

    #[test]
    fn dropout_eval_is_identity() {
        let d = Dropout::new(0.5).unwrap();
        let mut g = Graph::new();
        let mut rng = Rng::new(1);
        let x = g.input(&Tensor::filled(&[4], 2.0)).unwrap();
        let y = d.forward(&mut g, x, Mode::Eval, &mut rng).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_train_preserves_mean() {
        let p = 0.3;
        let d = Dropout::new(p).unwrap();
        let mut rng = Rng::new(2);
        let trials = 10_000;
        let mut sum = 0.0;
        for _ in 0..trials {
            let mut g = Graph::new();
            let x = g.input(&Tensor::scalar(1.0)).unwrap();
            let y = d.forward(&mut g, x, Mode::Train, &mut rng).unwrap();
            sum += g.value(y).item();
        }
        let mean = sum / trials as f64;
        // per-trial variance of the scaled Bernoulli is p/(1-p)
        let se = (p / (1.0 - p) / trials as f64).sqrt();
        assert!(
            (mean - 1.0).abs() < 3.0 * se,
            "dropout mean {mean} outside 3 standard errors ({se})"
        );
    }
}
