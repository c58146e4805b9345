use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Stack of 1-d temporal convolutions with same-padding (zero pad), so the
/// output sequence length always equals the input length. ReLU between
/// layers, none after the last.
///
/// Each layer's weight is stored as [kernel*d_in × d_out]: the input is
/// unfolded into windows and the convolution becomes one matmul.
#[derive(Debug, Clone)]
pub struct Conv1dStack {
    layers: Vec<ConvLayer>,
    pub kernel: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Debug, Clone)]
struct ConvLayer {
    w: ParamId,
    b: ParamId,
    in_dim: usize,
}

impl Conv1dStack {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        num_layers: usize,
        kernel: usize,
        in_dim: usize,
        out_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if num_layers == 0 {
            return Err(Error::InvalidArgument("conv stack needs at least one layer".into()));
        }
        if kernel % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv kernel size must be odd for same-padding, got {kernel}"
            )));
        }
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let d_in = if l == 0 { in_dim } else { out_dim };
            let fan_in = kernel * d_in;
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = store.add(
                format!("{name}.{l}.weight"),
                Tensor::uniform(&[fan_in, out_dim], bound, rng),
                true,
            );
            let b = store.add(
                format!("{name}.{l}.bias"),
                Tensor::uniform(&[out_dim], bound, rng),
                false,
            );
            layers.push(ConvLayer { w, b, in_dim: d_in });
        }
        Ok(Conv1dStack {
            layers,
            kernel,
            in_dim,
            out_dim,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// [T × in_dim] -> [T × out_dim].
    pub fn forward(&self, store: &ParamStore, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.in_dim {
            return Err(Error::ShapeMismatch {
                op: "conv_embed",
                lhs: shape,
                rhs: vec![0, self.in_dim],
            });
        }
        let t = shape[0];
        let pad = (self.kernel - 1) / 2;
        let mut h = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let d = layer.in_dim;
            let padded = if pad > 0 {
                let zeros = g.constant(Tensor::zeros(&[pad, d]))?;
                g.concat(&[zeros, h, zeros], 0)?
            } else {
                h
            };
            // unfold: window offset k contributes rows [k, k+T)
            let mut shifted = Vec::with_capacity(self.kernel);
            for k in 0..self.kernel {
                shifted.push(g.slice(padded, 0, k, t)?);
            }
            let unfolded = g.concat(&shifted, 1)?; // [T × kernel*d]
            let w = g.param(store, layer.w)?;
            let b = g.param(store, layer.b)?;
            let conv = g.matmul(unfolded, w)?;
            h = g.add(conv, b)?;
            if l + 1 < self.layers.len() {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }
}
