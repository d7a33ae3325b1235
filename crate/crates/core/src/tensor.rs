//! Dense row-major tensors and the matrix kernels shared by the tape.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Builds a matrix from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            shape: vec![rows.len(), cols],
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Rows and columns when viewed as a matrix over the last axis.
    pub fn as_matrix(&self) -> (usize, usize) {
        match self.shape.split_last() {
            Some((&cols, rest)) => (rest.iter().product(), cols),
            None => (1, 1),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let (_, cols) = self.as_matrix();
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape,
                rhs: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }
}

// Kernels below accumulate into `out`; callers zero it first when needed.

/// out[m×n] += a[m×k] · b[k×n]
///
/// Each output accumulates its k products in order from zero before being
/// added to `out`; tiles only change which outputs are computed together.
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    const R: usize = 4;
    const C: usize = 4;
    let (m_main, n_main) = (m - m % R, n - n % C);
    for i in (0..m_main).step_by(R) {
        let rows: [&[f64]; R] = core::array::from_fn(|r| &a[(i + r) * k..(i + r + 1) * k]);
        for j in (0..n_main).step_by(C) {
            let mut acc = [[0.0f64; C]; R];
            for (p, b_row) in b.chunks_exact(n).take(k).enumerate() {
                let bp: [f64; C] = b_row[j..j + C].try_into().unwrap();
                for r in 0..R {
                    let x = rows[r][p];
                    for c in 0..C {
                        acc[r][c] += x * bp[c];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                for (o, v) in out[(i + r) * n + j..(i + r) * n + j + C].iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        edge_columns(a, b, out, i..i + R, n_main, k, n);
    }
    edge_columns(a, b, out, m_main..m, 0, k, n);
}

fn edge_columns(
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
    rows: core::ops::Range<usize>,
    from: usize,
    k: usize,
    n: usize,
) {
    if from == n {
        return;
    }
    let mut tmp = alloc::vec![0.0; n - from];
    for i in rows {
        tmp.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..k {
            let x = a[i * k + p];
            for (t, &bv) in tmp.iter_mut().zip(&b[p * n + from..(p + 1) * n]) {
                *t += x * bv;
            }
        }
        for (o, t) in out[i * n + from..(i + 1) * n].iter_mut().zip(&tmp) {
            *o += t;
        }
    }
}

fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = alloc::vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = x[r * cols + c];
        }
    }
    t
}

/// out[m×n] += a[m×k] · b[n×k]ᵀ
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_nn(a, &transpose(b, n, k), out, m, k, n);
}

/// out[k×n] += a[m×k]ᵀ · b[m×n]
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_nn(&transpose(a, m, k), b, out, k, m, n);
}
