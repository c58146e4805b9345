//! Raw numeric kernels with sequential and data-parallel variants.
//!
//! The parallel variants split work across *independent output elements*;
//! per-element accumulation order is identical to the sequential code, so
//! both variants produce bit-identical results. `matmul` dispatches on a
//! work-size threshold; tiny products are faster sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many multiply-adds the rayon spawn overhead dominates.
#[cfg(feature = "parallel")]
const MATMUL_PAR_THRESHOLD: usize = 1 << 17;

/// C[n×m] = A[n×k] · B[k×m], sequential.
pub fn matmul_seq(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    matmul_rows(a, b, k, m, &mut c, 0);
    c
}

/// C[n×m] = A[n×k] · B[k×m], output rows computed in parallel.
#[cfg(feature = "parallel")]
pub fn matmul_par(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    c.par_chunks_mut(m)
        .enumerate()
        .for_each(|(i, row)| matmul_rows(&a[i * k..(i + 1) * k], b, k, m, row, 0));
    c
}

pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    {
        if n * k * m >= MATMUL_PAR_THRESHOLD && n > 1 {
            return matmul_par(a, b, n, k, m);
        }
    }
    matmul_seq(a, b, n, k, m)
}

// Writes `rows` output rows starting at A row `row0` into `c`.
fn matmul_rows(a: &[f64], b: &[f64], k: usize, m: usize, c: &mut [f64], row0: usize) {
    let rows = c.len() / m;
    for i in 0..rows {
        let arow = &a[(row0 + i) * k..(row0 + i + 1) * k];
        let crow = &mut c[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * m..(p + 1) * m];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Transpose of a row-major [n×m] matrix.
pub fn transpose(a: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a[i * m + j];
        }
    }
    out
}

/// Maps `f` over a slice of items, in parallel when the feature is on.
/// Output order always matches input order.
#[cfg(feature = "parallel")]
pub fn par_map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Maps `f` over indices 0..n, in parallel when the feature is on.
#[cfg(feature = "parallel")]
pub fn par_map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}
