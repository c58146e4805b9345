//! Dense row-major f64 tensors.
//!
//! A `Tensor` is immutable once built except for its gradient slot, which the
//! graph fills during the backward pass and the optimizer consumes. All values
//! are 64-bit; a NaN or infinity at an op boundary is an error, never a
//! silently propagated value.

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    pub requires_grad: bool,
    /// Accumulated gradient, same length as `values`. Zeroed by the caller
    /// between optimizer steps.
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape {
                op: "tensor",
                shape,
                reason: "zero-sized axis".into(),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::InvalidShape {
                op: "tensor",
                shape,
                reason: format!("shape implies {numel} values, got {}", values.len()),
            });
        }
        Ok(Tensor {
            shape,
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![0.0; numel]).unwrap()
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![v; numel]).unwrap()
    }

    /// Row-major matrix from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("from_rows: no rows".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("from_rows: ragged rows".into()));
        }
        let values = rows.iter().flatten().copied().collect();
        Tensor::new(vec![rows.len(), cols], values)
    }

    /// Entries drawn uniformly from [-bound, bound).
    pub fn uniform(shape: &[usize], bound: f64, rng: &mut Rng) -> Self {
        let numel: usize = shape.iter().product();
        let values = (0..numel).map(|_| rng.uniform_range(-bound, bound)).collect();
        Tensor::new(shape.to_vec(), values).unwrap()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.values.len(), 1);
        self.values[0]
    }

    /// Rows of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let cols = self.shape[1];
        &self.values[i * cols..(i + 1) * cols]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Adds `delta` into the gradient slot, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.values.len());
        let g = self
            .grad
            .get_or_insert_with(|| vec![0.0; self.values.len()]);
        for (a, d) in g.iter_mut().zip(delta) {
            *a += d;
        }
    }

    /// In-place update of the raw values (optimizer use only).
    pub fn apply_update(&mut self, f: impl FnMut(usize, &mut f64)) {
        let mut f = f;
        for (i, v) in self.values.iter_mut().enumerate() {
            f(i, v);
        }
    }
}

/// Broadcast shape of two operands: trailing axes are aligned and a size-1
/// axis expands to match the other operand.
pub fn broadcast_shapes(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da == db || da == 1 || db == 1 {
            out[i] = da.max(db);
        } else {
            return Err(Error::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
    }
    Ok(out)
}

/// Left-pads a shape with 1s to the given rank.
pub fn pad_shape(shape: &[usize], rank: usize) -> Vec<usize> {
    let mut padded = vec![1usize; rank];
    padded[rank - shape.len()..].copy_from_slice(shape);
    padded
}

/// Expands `data` (of shape `shape`) to `out_shape` under broadcasting rules.
pub fn broadcast_to(data: &[f64], shape: &[usize], out_shape: &[usize]) -> Vec<f64> {
    if shape == out_shape {
        return data.to_vec();
    }
    let rank = out_shape.len();
    let padded = pad_shape(shape, rank);
    let numel: usize = out_shape.iter().product();
    let mut out = vec![0.0; numel];
    let mut coords = vec![0usize; rank];
    for (flat, slot) in out.iter_mut().enumerate() {
        let mut rem = flat;
        for d in (0..rank).rev() {
            coords[d] = rem % out_shape[d];
            rem /= out_shape[d];
        }
        let mut src = 0;
        let mut stride = 1;
        for d in (0..rank).rev() {
            let c = if padded[d] == 1 { 0 } else { coords[d] };
            src += c * stride;
            stride *= padded[d];
        }
        *slot = data[src];
    }
    out
}

/// Sums a gradient of shape `grad_shape` back down to `target_shape`,
/// reversing a broadcast.
pub fn reduce_to_shape(grad: &[f64], grad_shape: &[usize], target_shape: &[usize]) -> Vec<f64> {
    if grad_shape == target_shape {
        return grad.to_vec();
    }
    let rank = grad_shape.len();
    let padded = pad_shape(target_shape, rank);
    let target_numel: usize = target_shape.iter().product();
    let mut out = vec![0.0; target_numel];
    let mut coords = vec![0usize; rank];
    for (flat, &g) in grad.iter().enumerate() {
        let mut rem = flat;
        for d in (0..rank).rev() {
            coords[d] = rem % grad_shape[d];
            rem /= grad_shape[d];
        }
        let mut dst = 0;
        let mut stride = 1;
        for d in (0..rank).rev() {
            let c = if padded[d] == 1 { 0 } else { coords[d] };
            dst += c * stride;
            stride *= padded[d];
        }
        out[dst] += g;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_checks() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shapes("t", &[3, 4], &[4]).unwrap(), vec![3, 4]);
        assert_eq!(broadcast_shapes("t", &[3, 1], &[3, 4]).unwrap(), vec![3, 4]);
        assert_eq!(broadcast_shapes("t", &[1], &[5]).unwrap(), vec![5]);
        assert!(broadcast_shapes("t", &[2, 3], &[2, 4]).is_err());
    }

    #[test]
    fn broadcast_and_reduce_roundtrip() {
        let bias = [1.0, 2.0];
        let expanded = broadcast_to(&bias, &[2], &[3, 2]);
        assert_eq!(expanded, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let reduced = reduce_to_shape(&expanded, &[3, 2], &[2]);
        assert_eq!(reduced, vec![3.0, 6.0]);
    }

    #[test]
    fn grad_accumulates() {
        let mut t = Tensor::zeros(&[2]);
        t.accumulate_grad(&[1.0, 2.0]);
        t.accumulate_grad(&[0.5, 0.5]);
        assert_eq!(t.grad.as_deref().unwrap(), &[1.5, 2.5]);
        t.zero_grad();
        assert_eq!(t.grad.as_deref().unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn seeded_init_is_bit_identical() {
        let a = Tensor::uniform(&[4, 4], 0.5, &mut Rng::new(11));
        let b = Tensor::uniform(&[4, 4], 0.5, &mut Rng::new(11));
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
