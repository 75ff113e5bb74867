use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of 64-bit floats. Vectors are `1 x n` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: [usize; 2],
    values: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { shape: [rows, cols], values: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape {
                node: "tensor".into(),
                detail: alloc::format!("{} values for shape {rows}x{cols}", values.len()),
            });
        }
        Ok(Self { shape: [rows, cols], values })
    }

    pub fn row_vector(values: Vec<f64>) -> Self {
        Self { shape: [1, values.len()], values }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: [1, 1], values: vec![v] }
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.shape[1] + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.shape[1];
        self.values[r * cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.shape[1];
        &self.values[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.shape[1];
        &mut self.values[r * c..(r + 1) * c]
    }

    pub fn fill(&mut self, v: f64) {
        self.values.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Tensor {
        let [r, c] = self.shape;
        let mut out = Tensor::zeros(c, r);
        for i in 0..r {
            for j in 0..c {
                out.values[j * r + i] = self.values[i * c + j];
            }
        }
        out
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let [m, n] = self.shape;
        let [n2, p] = other.shape;
        if n != n2 {
            return Err(Error::Shape { node: "matmul".into(), detail: alloc::format!("{m}x{n} · {n2}x{p}") });
        }
        let mut out = Tensor::zeros(m, p);
        matmul_into(&self.values, &other.values, &mut out.values, m, n, p);
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }
}

/// `out += a[m×n] · b[n×p]`.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, p: usize) {
    for i in 0..m {
        let orow = &mut out[i * p..(i + 1) * p];
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * p..(k + 1) * p];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

/// `x[1×n] · w[n×p] + bias[1×p]` for a single row.
pub fn affine(x: &[f64], w: &Tensor, bias: &Tensor) -> Vec<f64> {
    debug_assert_eq!(x.len(), w.rows());
    let mut out = bias.values().to_vec();
    matmul_into(x, w.values(), &mut out, 1, x.len(), w.cols());
    out
}
