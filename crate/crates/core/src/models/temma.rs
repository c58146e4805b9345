use serde::{Deserialize, Serialize};

use crate::data::AlignedSample;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::layers::{
    tma, Conv1dStack, Dropout, LayerNorm, Linear, MmaAttention, Mode, MultiHeadAttention,
    PositionalEncoding,
};
use crate::models::{Checkpoint, Prediction, PredictionKind};
use crate::params::ParamStore;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    /// Scalar probability head.
    Sigmoid,
    /// Raw linear outputs, clamped to [0, 1] at inference only.
    Linear,
}

/// Hyperparameters of the multimodal transformer encoder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemmaConfig {
    pub modality_dims: Vec<usize>,
    pub d_model: usize,
    pub conv_layers: usize,
    pub kernel_size: usize,
    pub encoder_blocks: usize,
    pub heads: usize,
    pub head_hidden: usize,
    pub dropout: f64,
    pub output_dim: usize,
    pub output_activation: OutputActivation,
    /// Positional table capacity (maximum supported sequence length).
    pub max_len: usize,
}

impl TemmaConfig {
    /// Binary classification head (scalar probability).
    pub fn classification(modality_dims: Vec<usize>) -> Self {
        TemmaConfig {
            modality_dims,
            d_model: 64,
            conv_layers: 5,
            kernel_size: 3,
            encoder_blocks: 4,
            heads: 4,
            head_hidden: 256,
            dropout: 0.2,
            output_dim: 1,
            output_activation: OutputActivation::Sigmoid,
            max_len: 512,
        }
    }

    /// Seven-intensity regression head.
    pub fn intensity(modality_dims: Vec<usize>) -> Self {
        TemmaConfig {
            output_dim: 7,
            output_activation: OutputActivation::Linear,
            ..TemmaConfig::classification(modality_dims)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modality_dims.is_empty() {
            return Err(Error::Config("at least one modality required".into()));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "heads ({}) must divide d_model ({})",
                self.heads, self.d_model
            )));
        }
        if self.output_dim != 1 && self.output_dim != 7 {
            return Err(Error::Config(format!(
                "output_dim must be 1 or 7, got {}",
                self.output_dim
            )));
        }
        if self.conv_layers == 0 || self.encoder_blocks == 0 {
            return Err(Error::Config(
                "conv_layers and encoder_blocks must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One encoder block: temporal attention (shared projections across
/// modalities), multimodal attention (per-modality projections), and a
/// position-wise fully connected sublayer, each wrapped in residual + norm.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub tma: MultiHeadAttention,
    pub ln_tma: LayerNorm,
    pub mma: MmaAttention,
    pub ln_mma: LayerNorm,
    pub fc: Linear,
    pub ln_fc: LayerNorm,
}

impl EncoderBlock {
    fn new(
        store: &mut ParamStore,
        name: &str,
        modalities: usize,
        d_model: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(EncoderBlock {
            tma: MultiHeadAttention::new(store, &format!("{name}.tma"), d_model, heads, rng)?,
            ln_tma: LayerNorm::new(store, &format!("{name}.ln_tma"), d_model),
            mma: MmaAttention::new(store, &format!("{name}.mma"), modalities, d_model, heads, rng)?,
            ln_mma: LayerNorm::new(store, &format!("{name}.ln_mma"), d_model),
            fc: Linear::new(store, &format!("{name}.fc"), d_model, d_model, rng),
            ln_fc: LayerNorm::new(store, &format!("{name}.ln_fc"), d_model),
        })
    }

    fn forward(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        xs: Vec<NodeId>,
    ) -> Result<Vec<NodeId>> {
        // temporal attention per modality, shared weights
        let mut after_tma = Vec::with_capacity(xs.len());
        for &x in &xs {
            let (att, _) = tma(store, g, x, &self.tma)?;
            let res = g.add(x, att)?;
            after_tma.push(self.ln_tma.forward(store, g, res)?);
        }
        // attention across modalities at each timestep
        let mma_out = self.mma.forward_sequence(store, g, &after_tma)?;
        let mut after_mma = Vec::with_capacity(xs.len());
        for (&y, &z) in after_tma.iter().zip(&mma_out) {
            let res = g.add(y, z)?;
            after_mma.push(self.ln_mma.forward(store, g, res)?);
        }
        // position-wise fully connected sublayer
        let mut out = Vec::with_capacity(xs.len());
        for &u in &after_mma {
            let f = self.fc.forward(store, g, u)?;
            let f = g.relu(f)?;
            let res = g.add(u, f)?;
            out.push(self.ln_fc.forward(store, g, res)?);
        }
        Ok(out)
    }
}

/// Multimodal transformer encoder: per-modality temporal conv embedding with
/// positional encoding, a stack of encoder blocks, temporal mean pooling,
/// modality concatenation and a fully connected head.
#[derive(Debug, Clone)]
pub struct TemmaModel {
    pub cfg: TemmaConfig,
    pub store: ParamStore,
    embeds: Vec<Conv1dStack>,
    pe: PositionalEncoding,
    blocks: Vec<EncoderBlock>,
    head_fc: Linear,
    head_out: Linear,
    dropout: Dropout,
}

impl TemmaModel {
    pub fn new(cfg: TemmaConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let modalities = cfg.modality_dims.len();
        let mut embeds = Vec::with_capacity(modalities);
        for (m, &dim) in cfg.modality_dims.iter().enumerate() {
            embeds.push(Conv1dStack::new(
                &mut store,
                &format!("embed.{m}"),
                cfg.conv_layers,
                cfg.kernel_size,
                dim,
                cfg.d_model,
                rng,
            )?);
        }
        let blocks = (0..cfg.encoder_blocks)
            .map(|b| {
                EncoderBlock::new(
                    &mut store,
                    &format!("block.{b}"),
                    modalities,
                    cfg.d_model,
                    cfg.heads,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let head_fc = Linear::new(
            &mut store,
            "head.fc",
            modalities * cfg.d_model,
            cfg.head_hidden,
            rng,
        );
        let head_out = Linear::new(&mut store, "head.out", cfg.head_hidden, cfg.output_dim, rng);
        Ok(TemmaModel {
            pe: PositionalEncoding::new(cfg.max_len, cfg.d_model),
            dropout: Dropout::new(cfg.dropout)?,
            cfg,
            store,
            embeds,
            blocks,
            head_fc,
            head_out,
        })
    }

    fn check_sample(&self, sample: &AlignedSample) -> Result<()> {
        if sample.modalities.len() != self.cfg.modality_dims.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} modalities, got {}",
                self.cfg.modality_dims.len(),
                sample.modalities.len()
            )));
        }
        for (m, tensor) in sample.modalities.iter().enumerate() {
            let s = tensor.shape();
            if s.len() != 2 || s[1] != self.cfg.modality_dims[m] {
                return Err(Error::ShapeMismatch {
                    op: "temma_forward",
                    lhs: s.to_vec(),
                    rhs: vec![0, self.cfg.modality_dims[m]],
                });
            }
        }
        Ok(())
    }

    /// Builds the forward pass and returns the head output node
    /// [1 × output_dim] (sigmoid applied for the sigmoid head; linear head
    /// raw — inference clamping happens in `predict`).
    pub fn forward(
        &self,
        g: &mut Graph,
        sample: &AlignedSample,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<NodeId> {
        self.check_sample(sample)?;
        let t_len = sample.t_len();
        let pe_rows = self.pe.rows(t_len)?;
        let pe_node = g.constant(pe_rows)?;

        let mut seqs = Vec::with_capacity(sample.modalities.len());
        for (m, tensor) in sample.modalities.iter().enumerate() {
            let x = g.input(tensor)?;
            let embedded = self.embeds[m].forward(&self.store, g, x)?;
            seqs.push(g.add(embedded, pe_node)?);
        }
        for block in &self.blocks {
            seqs = block.forward(&self.store, g, seqs)?;
        }
        // temporal mean pool, then concatenate modalities
        let pooled = seqs
            .iter()
            .map(|&s| g.mean_axis(s, 0, true))
            .collect::<Result<Vec<_>>>()?;
        let cat = g.concat(&pooled, 1)?; // [1 × M*d_model]
        let hidden = self.head_fc.forward(&self.store, g, cat)?;
        let hidden = g.relu(hidden)?;
        let hidden = self.dropout.forward(g, hidden, mode, rng)?;
        let out = self.head_out.forward(&self.store, g, hidden)?;
        match self.cfg.output_activation {
            OutputActivation::Sigmoid => g.sigmoid(out),
            OutputActivation::Linear => Ok(out),
        }
    }

    /// Copy of the model reading parameters from `store` (same layout);
    /// used by finite-difference probes.
    pub fn with_store(&self, store: ParamStore) -> Self {
        TemmaModel {
            store,
            ..self.clone()
        }
    }

    pub fn to_checkpoint(&self, seed: u64, epoch: u64) -> Result<Checkpoint> {
        Ok(Checkpoint {
            kind: "temma".into(),
            config_json: serde_json::to_string(&self.cfg)
                .map_err(|e| Error::Checkpoint(e.to_string()))?,
            seed,
            epoch,
            stores: vec![self.store.clone()],
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != "temma" || ckpt.stores.len() != 1 {
            return Err(Error::Checkpoint(format!(
                "expected a temma checkpoint, found kind {:?} with {} stores",
                ckpt.kind,
                ckpt.stores.len()
            )));
        }
        let cfg: TemmaConfig = serde_json::from_str(&ckpt.config_json)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut model = TemmaModel::new(cfg, &mut Rng::new(ckpt.seed))?;
        crate::models::checkpoint::restore_store(&mut model.store, &ckpt.stores[0])?;
        Ok(model)
    }

    /// Eval-mode head outputs without inference clamping (used for metric
    /// monitoring, where a saturated clamp would flatten a whole column).
    pub fn raw_outputs(&self, sample: &AlignedSample) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        // eval mode never draws from the rng
        let mut rng = Rng::new(0);
        let out = self.forward(&mut g, sample, Mode::Eval, &mut rng)?;
        Ok(g.value(out).values().to_vec())
    }

    /// Eval-mode prediction; linear heads are clamped to [0, 1] here.
    pub fn predict(&self, sample: &AlignedSample) -> Result<Prediction> {
        let mut values = self.raw_outputs(sample)?;
        if self.cfg.output_activation == OutputActivation::Linear {
            for v in &mut values {
                *v = v.clamp(0.0, 1.0);
            }
        }
        Ok(Prediction {
            values,
            kind: PredictionKind::PerSample,
        })
    }
}
