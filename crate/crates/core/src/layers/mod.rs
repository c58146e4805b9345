//! Neural building blocks: temporal convolution embedding, sinusoidal
//! positional encoding, multi-head attention in its temporal (within one
//! modality, across time) and multimodal (across modalities, per timestep)
//! arrangements, GRU/LSTM recurrences, layer norm, dropout and linear heads.
//!
//! Layers allocate their parameters in a shared [`ParamStore`] at
//! construction and are immutable afterwards; only the optimizer mutates the
//! store.

mod attention;
mod common;
mod conv;
mod encoding;
mod recurrent;

pub use attention::{mma_step, tma, MmaAttention, MultiHeadAttention};
pub use common::{Dropout, LayerNorm, Linear};
pub use conv::Conv1dStack;
pub use encoding::{positional_encode, PositionalEncoding};
pub use recurrent::{GruLayer, LstmLayer};

/// Forward-pass mode; dropout is the identity in `Eval`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
