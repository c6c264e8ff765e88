use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Symmetric Toeplitz matrix given by its first column, with FFT products.
#[derive(Clone)]
pub struct SymmetricToeplitz {
    column: Vec<f64>,
    embed_len: usize,
    spectrum: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SymmetricToeplitz {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymmetricToeplitz")
            .field("n", &self.column.len())
            .field("embed_len", &self.embed_len)
            .finish()
    }
}

impl SymmetricToeplitz {
    pub fn new(column: Vec<f64>) -> Self {
        let n = column.len();
        assert!(n > 0, "Toeplitz matrix needs at least one entry");
        let embed_len = (2 * n).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(embed_len);
        let inverse = planner.plan_fft_inverse(embed_len);
        let mut buf = vec![Complex64::new(0.0, 0.0); embed_len];
        buf[0].re = column[0];
        for k in 1..n {
            buf[k].re = column[k];
            buf[embed_len - k].re = column[k];
        }
        forward.process(&mut buf);
        let spectrum = buf.iter().map(|c| c.re).collect();
        Self {
            column,
            embed_len,
            spectrum,
            forward,
            inverse,
        }
    }

    pub fn len(&self) -> usize {
        self.column.len()
    }

    pub fn is_empty(&self) -> bool {
        self.column.is_empty()
    }

    pub fn column(&self) -> &[f64] {
        &self.column
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.column[i.abs_diff(j)]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        assert_eq!(x.len(), n);
        if n <= 32 {
            return (0..n)
                .map(|i| (0..n).map(|j| self.entry(i, j) * x[j]).sum())
                .collect();
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); self.embed_len];
        for (b, &v) in buf.iter_mut().zip(x) {
            b.re = v;
        }
        self.forward.process(&mut buf);
        for (b, &s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= s;
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.embed_len as f64;
        buf[..n].iter().map(|c| c.re * scale).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| self.entry(i, j))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fft_product_matches_dense() {
        let col: Vec<f64> = (0..300).map(|k| (1000.0 / (k as f64 + 1.0)).ln()).collect();
        let t = SymmetricToeplitz::new(col);
        let x: Vec<f64> = (0..300).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let fast = t.mul_vec(&x);
        let dense = t.to_dense() * nalgebra::DVector::from_vec(x);
        for (a, b) in fast.iter().zip(dense.iter()) {
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
    }
}
