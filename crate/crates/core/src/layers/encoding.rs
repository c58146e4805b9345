use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sinusoidal position table:
/// `PE(t, 2i) = sin(t / 10000^(2i/d))`, `PE(t, 2i+1) = cos(t / 10000^(2i/d))`.
///
/// Fixed, not trained; the caller adds the first `T` rows to an embedded
/// sequence.
pub fn positional_encode(len: usize, d_model: usize) -> Tensor {
    let mut values = vec![0.0; len * d_model];
    for t in 0..len {
        for i in 0..d_model {
            let exponent = 2.0 * (i / 2) as f64 / d_model as f64;
            let angle = t as f64 / 10000f64.powf(exponent);
            values[t * d_model + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, d_model], values).expect("table shape is consistent")
}

#[derive(Debug, Clone)]
pub struct PositionalEncoding {
    pub max_len: usize,
    pub d_model: usize,
    table: Tensor,
}

impl PositionalEncoding {
    pub fn new(max_len: usize, d_model: usize) -> Self {
        PositionalEncoding {
            max_len,
            d_model,
            table: positional_encode(max_len, d_model),
        }
    }

    /// First `len` rows of the table.
    pub fn rows(&self, len: usize) -> Result<Tensor> {
        if len > self.max_len {
            return Err(Error::InvalidArgument(format!(
                "sequence length {len} exceeds positional table size {}",
                self.max_len
            )));
        }
        let d = self.d_model;
        Tensor::new(
            vec![len, d],
            self.table.values()[..len * d].to_vec(),
        )
    }
}
