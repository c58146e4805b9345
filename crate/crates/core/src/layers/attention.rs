use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::layers::Linear;
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Scaled dot-product multi-head attention with learned query/key/value
/// projections and an output projection. `heads` must divide `d_model`.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub d_model: usize,
    pub heads: usize,
    pub d_k: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "heads ({heads}) must divide d_model ({d_model})"
            )));
        }
        Ok(MultiHeadAttention {
            wq: Linear::new(store, &format!("{name}.wq"), d_model, d_model, rng),
            wk: Linear::new(store, &format!("{name}.wk"), d_model, d_model, rng),
            wv: Linear::new(store, &format!("{name}.wv"), d_model, d_model, rng),
            wo: Linear::new(store, &format!("{name}.wo"), d_model, d_model, rng),
            d_model,
            heads,
            d_k: d_model / heads,
        })
    }

    /// Q, K, V are [L × d_model] (K and V share a length which may differ
    /// from Q's). Returns the projected output [L_q × d_model] and the
    /// detached attention weights [heads × L_q × L_k].
    pub fn forward(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        q: NodeId,
        k: NodeId,
        v: NodeId,
    ) -> Result<(NodeId, Tensor)> {
        for &x in &[q, k, v] {
            let s = g.value(x).shape();
            if s.len() != 2 || s[1] != self.d_model {
                return Err(Error::ShapeMismatch {
                    op: "attention",
                    lhs: s.to_vec(),
                    rhs: vec![0, self.d_model],
                });
            }
        }
        let qp = self.wq.forward(store, g, q)?;
        let kp = self.wk.forward(store, g, k)?;
        let vp = self.wv.forward(store, g, v)?;
        let (merged, weights) = attend_heads(g, qp, kp, vp, self.heads, self.d_k)?;
        let out = self.wo.forward(store, g, merged)?;
        Ok((out, weights))
    }

    /// Self-attention: Q = K = V = x.
    pub fn self_attention(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        x: NodeId,
    ) -> Result<(NodeId, Tensor)> {
        self.forward(store, g, x, x, x)
    }
}

/// Splits projected Q/K/V into `heads` column blocks, runs scaled
/// dot-product attention per head and concatenates the heads again.
fn attend_heads(
    g: &mut Graph,
    qp: NodeId,
    kp: NodeId,
    vp: NodeId,
    heads: usize,
    d_k: usize,
) -> Result<(NodeId, Tensor)> {
    let lq = g.value(qp).shape()[0];
    let lk = g.value(kp).shape()[0];
    let scale = 1.0 / (d_k as f64).sqrt();
    let mut outputs = Vec::with_capacity(heads);
    let mut weight_values = Vec::with_capacity(heads * lq * lk);
    for h in 0..heads {
        let qh = g.slice(qp, 1, h * d_k, d_k)?;
        let kh = g.slice(kp, 1, h * d_k, d_k)?;
        let vh = g.slice(vp, 1, h * d_k, d_k)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scaled = g.scale(scores, scale)?;
        let attn = g.softmax_last_axis(scaled)?;
        weight_values.extend_from_slice(g.value(attn).values());
        outputs.push(g.matmul(attn, vh)?);
    }
    let merged = g.concat(&outputs, 1)?;
    let weights = Tensor::new(vec![heads, lq, lk], weight_values)?;
    Ok((merged, weights))
}

/// Temporal attention: self-attention along the time axis of one modality's
/// embedded sequence [T × d_model]. The projection weights are shared across
/// modalities by the caller passing the same `mha`.
pub fn tma(
    store: &ParamStore,
    g: &mut Graph,
    x: NodeId,
    mha: &MultiHeadAttention,
) -> Result<(NodeId, Tensor)> {
    mha.self_attention(store, g, x)
}

/// Attention across the modality axis at a fixed timestep, with a projection
/// per modality and one shared output projection.
#[derive(Debug, Clone)]
pub struct MmaAttention {
    pub wq: Vec<Linear>,
    pub wk: Vec<Linear>,
    pub wv: Vec<Linear>,
    pub wo: Linear,
    pub d_model: usize,
    pub heads: usize,
    pub d_k: usize,
    pub modalities: usize,
}

impl MmaAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        modalities: usize,
        d_model: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "heads ({heads}) must divide d_model ({d_model})"
            )));
        }
        if modalities == 0 {
            return Err(Error::InvalidArgument("at least one modality required".into()));
        }
        let mut wq = Vec::with_capacity(modalities);
        let mut wk = Vec::with_capacity(modalities);
        let mut wv = Vec::with_capacity(modalities);
        for m in 0..modalities {
            wq.push(Linear::new(store, &format!("{name}.m{m}.wq"), d_model, d_model, rng));
            wk.push(Linear::new(store, &format!("{name}.m{m}.wk"), d_model, d_model, rng));
            wv.push(Linear::new(store, &format!("{name}.m{m}.wv"), d_model, d_model, rng));
        }
        Ok(MmaAttention {
            wq,
            wk,
            wv,
            wo: Linear::new(store, &format!("{name}.wo"), d_model, d_model, rng),
            d_model,
            heads,
            d_k: d_model / heads,
            modalities,
        })
    }

    /// One timestep: input [M × d_model] stacking each modality's row.
    /// Row `m` is projected by modality `m`'s weights, attention runs across
    /// the modality axis, and the shared output projection is applied.
    pub fn forward_step(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        x: NodeId,
    ) -> Result<(NodeId, Tensor)> {
        let s = g.value(x).shape().to_vec();
        if s.len() != 2 || s[0] != self.modalities || s[1] != self.d_model {
            return Err(Error::ShapeMismatch {
                op: "mma",
                lhs: s,
                rhs: vec![self.modalities, self.d_model],
            });
        }
        let mut qrows = Vec::with_capacity(self.modalities);
        let mut krows = Vec::with_capacity(self.modalities);
        let mut vrows = Vec::with_capacity(self.modalities);
        for m in 0..self.modalities {
            let row = g.row(x, m)?;
            qrows.push(self.wq[m].forward(store, g, row)?);
            krows.push(self.wk[m].forward(store, g, row)?);
            vrows.push(self.wv[m].forward(store, g, row)?);
        }
        let qp = g.concat(&qrows, 0)?;
        let kp = g.concat(&krows, 0)?;
        let vp = g.concat(&vrows, 0)?;
        let (merged, weights) = attend_heads(g, qp, kp, vp, self.heads, self.d_k)?;
        let out = self.wo.forward(store, g, merged)?;
        Ok((out, weights))
    }

    /// Applies the per-timestep attention over whole sequences.
    ///
    /// `xs[m]` is modality m's sequence [T × d_model]; the result has the
    /// same layout. Projections are precomputed per modality over the whole
    /// sequence (row t of X·W equals projecting row t alone), which keeps the
    /// graph small; the output projection is likewise applied per modality.
    pub fn forward_sequence(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        xs: &[NodeId],
    ) -> Result<Vec<NodeId>> {
        if xs.len() != self.modalities {
            return Err(Error::InvalidArgument(format!(
                "expected {} modalities, got {}",
                self.modalities,
                xs.len()
            )));
        }
        let t_len = g.value(xs[0]).shape()[0];
        for &x in xs {
            let s = g.value(x).shape();
            if s != [t_len, self.d_model] {
                return Err(Error::ShapeMismatch {
                    op: "mma",
                    lhs: s.to_vec(),
                    rhs: vec![t_len, self.d_model],
                });
            }
        }
        let mut qs = Vec::with_capacity(self.modalities);
        let mut ks = Vec::with_capacity(self.modalities);
        let mut vs = Vec::with_capacity(self.modalities);
        for (m, &x) in xs.iter().enumerate() {
            qs.push(self.wq[m].forward(store, g, x)?);
            ks.push(self.wk[m].forward(store, g, x)?);
            vs.push(self.wv[m].forward(store, g, x)?);
        }
        // per-timestep attention outputs, each [M × d_model]
        let mut step_outputs = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let qrows: Vec<NodeId> = qs
                .iter()
                .map(|&q| g.row(q, t))
                .collect::<Result<_>>()?;
            let krows: Vec<NodeId> = ks
                .iter()
                .map(|&k| g.row(k, t))
                .collect::<Result<_>>()?;
            let vrows: Vec<NodeId> = vs
                .iter()
                .map(|&v| g.row(v, t))
                .collect::<Result<_>>()?;
            let qp = g.concat(&qrows, 0)?;
            let kp = g.concat(&krows, 0)?;
            let vp = g.concat(&vrows, 0)?;
            let (merged, _) = attend_heads(g, qp, kp, vp, self.heads, self.d_k)?;
            step_outputs.push(merged);
        }
        // reassemble per modality and project
        let mut outs = Vec::with_capacity(self.modalities);
        for m in 0..self.modalities {
            let rows: Vec<NodeId> = step_outputs
                .iter()
                .map(|&s| g.row(s, m))
                .collect::<Result<_>>()?;
            let seq = g.concat(&rows, 0)?;
            outs.push(self.wo.forward(store, g, seq)?);
        }
        Ok(outs)
    }
}

/// One-timestep multimodal attention as a free operation (see
/// [`MmaAttention::forward_step`]).
pub fn mma_step(
    store: &ParamStore,
    g: &mut Graph,
    x: NodeId,
    mma: &MmaAttention,
) -> Result<(NodeId, Tensor)> {
    mma.forward_step(store, g, x)
}
