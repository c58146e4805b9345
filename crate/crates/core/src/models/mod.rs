//! End-to-end architectures: the multimodal transformer encoder
//! (classification / intensity regression) and the self-attention GRU
//! regressors with a late-fusion Bi-LSTM (per-timestep series prediction).

mod checkpoint;
mod sagru;
mod temma;

pub use checkpoint::{restore_store, Checkpoint};
pub use sagru::{LateFusionModel, SaGruConfig, SaGruModel, StressModel};
pub use temma::{EncoderBlock, OutputActivation, TemmaConfig, TemmaModel};

/// Model outputs for one sample: either one vector per sample or one scalar
/// per timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub values: Vec<f64>,
    pub kind: PredictionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionKind {
    PerSample,
    PerStep,
}
