use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// One direction's packed weights: input map [d_in × gates*h], hidden map
/// [h × gates*h] and bias [gates*h].
#[derive(Debug, Clone)]
struct DirectionWeights {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

impl DirectionWeights {
    fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        gates: usize,
        rng: &mut Rng,
    ) -> Self {
        let wb = 1.0 / (in_dim as f64).sqrt();
        let hb = 1.0 / (hidden as f64).sqrt();
        DirectionWeights {
            w_ih: store.add(
                format!("{name}.w_ih"),
                Tensor::uniform(&[in_dim, gates * hidden], wb, rng),
                true,
            ),
            w_hh: store.add(
                format!("{name}.w_hh"),
                Tensor::uniform(&[hidden, gates * hidden], hb, rng),
                true,
            ),
            bias: store.add(
                format!("{name}.bias"),
                Tensor::uniform(&[gates * hidden], hb, rng),
                false,
            ),
        }
    }
}

/// Gated recurrent unit, optionally bidirectional.
///
/// Gate convention (gates packed as update z, reset r, candidate n):
///   z_t = sigmoid(x_t W_z + h_{t-1} U_z + b_z)
///   r_t = sigmoid(x_t W_r + h_{t-1} U_r + b_r)
///   n_t = tanh(x_t W_n + b_n + r_t * (h_{t-1} U_n))
///   h_t = (1 - z_t) * n_t + z_t * h_{t-1}
///
/// Published conventions differ; tests depend on this one.
#[derive(Debug, Clone)]
pub struct GruLayer {
    fwd: DirectionWeights,
    bwd: Option<DirectionWeights>,
    pub in_dim: usize,
    pub hidden: usize,
}

impl GruLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        bidirectional: bool,
        rng: &mut Rng,
    ) -> Self {
        GruLayer {
            fwd: DirectionWeights::new(store, &format!("{name}.fwd"), in_dim, hidden, 3, rng),
            bwd: bidirectional
                .then(|| DirectionWeights::new(store, &format!("{name}.bwd"), in_dim, hidden, 3, rng)),
            in_dim,
            hidden,
        }
    }

    pub fn bidirectional(&self) -> bool {
        self.bwd.is_some()
    }

    /// Output feature width: hidden, doubled when bidirectional.
    pub fn out_dim(&self) -> usize {
        if self.bwd.is_some() {
            2 * self.hidden
        } else {
            self.hidden
        }
    }

    /// [T × in_dim] -> [T × out_dim]. `h0` defaults to zeros and is used for
    /// both directions.
    pub fn forward(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        x: NodeId,
        h0: Option<&Tensor>,
    ) -> Result<NodeId> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.in_dim {
            return Err(Error::ShapeMismatch {
                op: "gru_forward",
                lhs: shape,
                rhs: vec![0, self.in_dim],
            });
        }
        let forward = self.scan(store, g, x, h0, &self.fwd)?;
        match &self.bwd {
            None => Ok(forward),
            Some(bwd) => {
                let reversed = g.flip(x, 0)?;
                let back = self.scan(store, g, reversed, h0, bwd)?;
                let back = g.flip(back, 0)?;
                g.concat(&[forward, back], 1)
            }
        }
    }

    fn scan(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        x: NodeId,
        h0: Option<&Tensor>,
        dir: &DirectionWeights,
    ) -> Result<NodeId> {
        let t_len = g.value(x).shape()[0];
        let h = self.hidden;
        let w_ih = g.param(store, dir.w_ih)?;
        let w_hh = g.param(store, dir.w_hh)?;
        let bias = g.param(store, dir.bias)?;
        let xw_all = g.matmul(x, w_ih)?;
        let xw_all = g.add(xw_all, bias)?; // [T × 3h], bias folded in once

        let mut hidden = match h0 {
            Some(t) => {
                if t.shape() != [1, h] {
                    return Err(Error::ShapeMismatch {
                        op: "gru_forward",
                        lhs: t.shape().to_vec(),
                        rhs: vec![1, h],
                    });
                }
                g.input(t)?
            }
            None => g.constant(Tensor::zeros(&[1, h]))?,
        };
        let mut steps = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let xt = g.row(xw_all, t)?;
            let hu = g.matmul(hidden, w_hh)?;
            let xz = g.slice(xt, 1, 0, h)?;
            let xr = g.slice(xt, 1, h, h)?;
            let xn = g.slice(xt, 1, 2 * h, h)?;
            let hz = g.slice(hu, 1, 0, h)?;
            let hr = g.slice(hu, 1, h, h)?;
            let hn = g.slice(hu, 1, 2 * h, h)?;

            let z_in = g.add(xz, hz)?;
            let z = g.sigmoid(z_in)?;
            let r_in = g.add(xr, hr)?;
            let r = g.sigmoid(r_in)?;
            let gated = g.mul(r, hn)?;
            let n_in = g.add(xn, gated)?;
            let n = g.tanh(n_in)?;

            let one_minus_z = g.affine(z, -1.0, 1.0)?;
            let new_part = g.mul(one_minus_z, n)?;
            let old_part = g.mul(z, hidden)?;
            hidden = g.add(new_part, old_part)?;
            steps.push(hidden);
        }
        g.concat(&steps, 0)
    }
}

/// Long short-term memory, optionally bidirectional.
///
/// Gates packed as input i, forget f, cell g, output o:
///   i, f, o = sigmoid(.), g = tanh(.)
///   c_t = f * c_{t-1} + i * g
///   h_t = o * tanh(c_t)
#[derive(Debug, Clone)]
pub struct LstmLayer {
    fwd: DirectionWeights,
    bwd: Option<DirectionWeights>,
    pub in_dim: usize,
    pub hidden: usize,
}

impl LstmLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        bidirectional: bool,
        rng: &mut Rng,
    ) -> Self {
        LstmLayer {
            fwd: DirectionWeights::new(store, &format!("{name}.fwd"), in_dim, hidden, 4, rng),
            bwd: bidirectional
                .then(|| DirectionWeights::new(store, &format!("{name}.bwd"), in_dim, hidden, 4, rng)),
            in_dim,
            hidden,
        }
    }

    pub fn out_dim(&self) -> usize {
        if self.bwd.is_some() {
            2 * self.hidden
        } else {
            self.hidden
        }
    }

    /// [T × in_dim] -> [T × out_dim]; hidden and cell states start at zero.
    pub fn forward(&self, store: &ParamStore, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.in_dim {
            return Err(Error::ShapeMismatch {
                op: "lstm_forward",
                lhs: shape,
                rhs: vec![0, self.in_dim],
            });
        }
        let forward = self.scan(store, g, x, &self.fwd)?;
        match &self.bwd {
            None => Ok(forward),
            Some(bwd) => {
                let reversed = g.flip(x, 0)?;
                let back = self.scan(store, g, reversed, bwd)?;
                let back = g.flip(back, 0)?;
                g.concat(&[forward, back], 1)
            }
        }
    }

    fn scan(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        x: NodeId,
        dir: &DirectionWeights,
    ) -> Result<NodeId> {
        let t_len = g.value(x).shape()[0];
        let h = self.hidden;
        let w_ih = g.param(store, dir.w_ih)?;
        let w_hh = g.param(store, dir.w_hh)?;
        let bias = g.param(store, dir.bias)?;
        let xw_all = g.matmul(x, w_ih)?;
        let xw_all = g.add(xw_all, bias)?; // [T × 4h]

        let mut hidden = g.constant(Tensor::zeros(&[1, h]))?;
        let mut cell = g.constant(Tensor::zeros(&[1, h]))?;
        let mut steps = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let xt = g.row(xw_all, t)?;
            let hu = g.matmul(hidden, w_hh)?;
            let pre = g.add(xt, hu)?; // [1 × 4h]
            let i_in = g.slice(pre, 1, 0, h)?;
            let f_in = g.slice(pre, 1, h, h)?;
            let g_in = g.slice(pre, 1, 2 * h, h)?;
            let o_in = g.slice(pre, 1, 3 * h, h)?;
            let i = g.sigmoid(i_in)?;
            let f = g.sigmoid(f_in)?;
            let cand = g.tanh(g_in)?;
            let o = g.sigmoid(o_in)?;

            let keep = g.mul(f, cell)?;
            let write = g.mul(i, cand)?;
            cell = g.add(keep, write)?;
            let cell_act = g.tanh(cell)?;
            hidden = g.mul(o, cell_act)?;
            steps.push(hidden);
        }
        g.concat(&steps, 0)
    }
}
