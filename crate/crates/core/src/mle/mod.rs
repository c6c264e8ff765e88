//! Approximate maximum-likelihood estimation of the multifractal random walk.
//!
//! The latent log-volatility field is integrated out with a Laplace
//! approximation around its posterior mode. The inner problem is strictly
//! concave, so the mode is unique and Newton's method with step halving finds
//! it reliably. The outer problem over `(λ, ln σ)` is solved with a bounded
//! Nelder–Mead search.

mod fit;
mod laplace;
mod quadrature;

pub use fit::{
    equal_splits, fit_mrw, fit_returns, fit_windows, window_ranges, EstimateSeries, FitOptions,
    FitResult, TPolicy, Window, WindowRule,
};
pub use laplace::{
    approx_log_likelihood, joint_log_density, joint_log_density_gradient, posterior_mode,
    LaplaceOptions, LatentPrior, PosteriorMode,
};
pub use quadrature::{gauss_hermite, quadrature_likelihood_oracle};

/// Closed-form log-likelihood of i.i.d. `N(0, σ²)` observations.
pub fn iid_gaussian_log_likelihood(x: &[f64], sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    x.iter()
        .map(|v| -0.5 * (2.0 * std::f64::consts::PI * s2).ln() - v * v / (2.0 * s2))
        .sum()
}
