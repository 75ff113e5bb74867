//! Small dense linear algebra for least-squares fits.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Square symmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.data[i * self.n..(i + 1) * self.n].iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn mean_diagonal(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        (0..self.n).map(|i| self.get(i, i)).sum::<f64>() / self.n as f64
    }
}

/// Gram matrix `XᵀX` and moment vector `Xᵀy` accumulated row by row.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub gram: SymMatrix,
    pub moment: Vec<f64>,
    pub rows: usize,
}

impl NormalEquations {
    pub fn new(p: usize) -> Self {
        Self { gram: SymMatrix::zeros(p), moment: vec![0.0; p], rows: 0 }
    }

    pub fn add_row(&mut self, x: &[f64], y: f64) {
        let p = self.gram.n;
        debug_assert_eq!(x.len(), p);
        for i in 0..p {
            if x[i] == 0.0 {
                continue;
            }
            self.moment[i] += x[i] * y;
            let row = &mut self.gram.data[i * p..(i + 1) * p];
            for (g, xj) in row.iter_mut().zip(x) {
                *g += x[i] * xj;
            }
        }
        self.rows += 1;
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &SymMatrix) -> Result<Vec<f64>> {
    let n = a.n;
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.get(i, j);
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return Err(Error::Data(alloc::format!("matrix not positive definite at pivot {i}")));
                }
                l[i * n + i] = math::sqrt(sum);
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Ok(l)
}

pub fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut z = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            z[i] -= l[i * n + k] * z[k];
        }
        z[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            z[i] -= l[k * n + i] * z[k];
        }
        z[i] /= l[i * n + i];
    }
    z
}

/// Outcome of solving the normal equations.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresSolution {
    pub coefficients: Vec<f64>,
    /// Ridge added to the diagonal, zero when the Gram matrix was well posed.
    pub jitter: f64,
}

/// Solves `(XᵀX) β = Xᵀy`. If the factorization fails, retries with a ridge of
/// `1e-8` times the mean diagonal (escalating by 10x up to five times).
pub fn solve_normal_equations(eq: &NormalEquations) -> Result<LeastSquaresSolution> {
    let n = eq.gram.n;
    if let Ok(l) = cholesky(&eq.gram) {
        return Ok(LeastSquaresSolution { coefficients: cholesky_solve(&l, n, &eq.moment), jitter: 0.0 });
    }
    let scale = eq.gram.mean_diagonal().max(f64::MIN_POSITIVE);
    let mut jitter = 1e-8 * scale;
    for _ in 0..5 {
        let mut g = eq.gram.clone();
        for i in 0..n {
            g.add(i, i, jitter);
        }
        if let Ok(l) = cholesky(&g) {
            log::warn!("normal equations singular; solved with ridge {jitter:e}");
            return Ok(LeastSquaresSolution { coefficients: cholesky_solve(&l, n, &eq.moment), jitter });
        }
        jitter *= 10.0;
    }
    Err(Error::Data("design matrix is singular even after regularization".into()))
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power iteration.
pub fn largest_eigenvalue(a: &SymMatrix, iterations: usize) -> f64 {
    let n = a.n;
    if n == 0 {
        return 0.0;
    }
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 1e-3).collect();
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let w = a.mul_vec(&v);
        let norm = math::sqrt(w.iter().map(|x| x * x).sum());
        if norm == 0.0 {
            return 0.0;
        }
        let next: Vec<f64> = w.iter().map(|x| x / norm).collect();
        let new_lambda: f64 = next.iter().zip(a.mul_vec(&next)).map(|(a, b)| a * b).sum();
        let done = math::abs(new_lambda - lambda) <= 1e-12 * new_lambda.max(1.0);
        lambda = new_lambda;
        v = next;
        if done {
            break;
        }
    }
    lambda
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_exact_system() {
        let mut eq = NormalEquations::new(2);
        // y = 2 + 3x
        for x in [0.0, 1.0, 2.0, 5.0] {
            eq.add_row(&[1.0, x], 2.0 + 3.0 * x);
        }
        let s = solve_normal_equations(&eq).unwrap();
        assert_eq!(s.jitter, 0.0);
        assert!((s.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((s.coefficients[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_design_uses_jitter() {
        let mut eq = NormalEquations::new(2);
        for x in [1.0, 2.0, 3.0] {
            eq.add_row(&[x, 2.0 * x], x);
        }
        let s = solve_normal_equations(&eq).unwrap();
        assert!(s.jitter > 0.0);
        // Any solution on the line b0 + 2 b1 = 1 fits exactly.
        assert!((s.coefficients[0] + 2.0 * s.coefficients[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn power_iteration_on_diagonal() {
        let mut a = SymMatrix::zeros(3);
        a.add(0, 0, 1.0);
        a.add(1, 1, 7.0);
        a.add(2, 2, 3.0);
        assert!((largest_eigenvalue(&a, 500) - 7.0).abs() < 1e-8);
    }
}
