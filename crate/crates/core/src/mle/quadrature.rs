use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::mrw::{log_vol_covariance, normalization_constant, MrwParams};

/// Probabilists' Gauss–Hermite rule with `m` nodes; weights sum to 1, so
/// `Σ wᵢ f(zᵢ) ≈ E[f(Z)]` for `Z ~ N(0, 1)`.
pub fn gauss_hermite(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let jacobi = DMatrix::from_fn(m, m, |i, j| {
        if i.abs_diff(j) == 1 {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    (
        pairs.iter().map(|p| p.0).collect(),
        pairs.iter().map(|p| p.1 / total).collect(),
    )
}

/// Likelihood `log p(x | θ)` by tensor-product Gauss–Hermite quadrature over
/// the latent Gaussian. Intended as a reference for short series only.
pub fn quadrature_likelihood_oracle(x: &[f64], params: &MrwParams, nodes: usize) -> Result<f64> {
    let n = x.len();
    if n > 4 {
        return Err(Error::OracleTooLarge(n));
    }
    if n == 0 {
        return Err(Error::validation("need at least one observation"));
    }
    if nodes < 40 {
        return Err(Error::validation("quadrature oracle needs at least 40 nodes per dimension"));
    }
    let cov = DMatrix::from_fn(n, n, |i, j| log_vol_covariance(params, i.abs_diff(j)));
    let eig = SymmetricEigen::new(cov);
    // h = V·diag(√μ)·z
    let root = DMatrix::from_fn(n, n, |i, k| eig.eigenvectors[(i, k)] * eig.eigenvalues[k].max(0.0).sqrt());
    let s2c = params.sigma * params.sigma * normalization_constant(params);
    let log_norm = -0.5 * (2.0 * std::f64::consts::PI * s2c).ln();
    let (z, w) = gauss_hermite(nodes);
    let log_w: Vec<f64> = w.iter().map(|v| v.ln()).collect();

    let total = nodes.pow(n as u32);
    let mut terms = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        let mut lw = 0.0;
        let mut ll = 0.0;
        for i in 0..n {
            lw += log_w[idx[i]];
            let h: f64 = (0..n).map(|k| root[(i, k)] * z[idx[k]]).sum();
            ll += log_norm - 0.5 * h - x[i] * x[i] * (-h).exp() / (2.0 * s2c);
        }
        terms.push(lw + ll);
        for slot in idx.iter_mut() {
            *slot += 1;
            if *slot < nodes {
                break;
            }
            *slot = 0;
        }
    }
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mle::iid_gaussian_log_likelihood;

    #[test]
    fn rule_integrates_gaussian_moments() {
        let (z, w) = gauss_hermite(40);
        let m2: f64 = z.iter().zip(&w).map(|(a, b)| a * a * b).sum();
        let m4: f64 = z.iter().zip(&w).map(|(a, b)| a.powi(4) * b).sum();
        assert!((m2 - 1.0).abs() < 1e-12);
        assert!((m4 - 3.0).abs() < 1e-11);
    }

    #[test]
    fn degenerate_prior_gives_iid_likelihood() {
        let x = [0.5, -0.2, 1.1];
        let p = MrwParams::new(0.0, 0.9, 10.0, 1.0).unwrap();
        let q = quadrature_likelihood_oracle(&x, &p, 40).unwrap();
        assert!((q - iid_gaussian_log_likelihood(&x, 0.9)).abs() < 1e-12);
    }

    #[test]
    fn self_convergence_and_symmetry() {
        let p = MrwParams::new(0.6, 1.2, 3.0, 1.0).unwrap();
        for x in [[0.4, -1.3], [2.0, 0.1], [0.01, 0.6]] {
            let a = quadrature_likelihood_oracle(&x, &p, 40).unwrap();
            let b = quadrature_likelihood_oracle(&x, &p, 80).unwrap();
            assert!(((a - b) / b).abs() < 1e-6, "{a} vs {b}");
            let flipped = [-x[0], x[1]];
            let c = quadrature_likelihood_oracle(&flipped, &p, 40).unwrap();
            assert_eq!(a, c);
        }
    }

    #[test]
    fn refuses_long_series() {
        let p = MrwParams::new(0.3, 1.0, 10.0, 1.0).unwrap();
        assert!(matches!(
            quadrature_likelihood_oracle(&[0.1; 5], &p, 40),
            Err(Error::OracleTooLarge(5))
        ));
    }
}
