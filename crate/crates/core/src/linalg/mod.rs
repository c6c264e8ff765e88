//! Structured linear algebra for stationary Gaussian latent fields.
//!
//! Covariances of a stationary process on a regular grid are symmetric
//! Toeplitz. Products are done by FFT on a circulant embedding; factorizations
//! of `shift·I + D·(scale·K)·D` use a hierarchical off-diagonal low-rank
//! (HODLR) representation of `K`, which for the log-correlated kernels used
//! here has off-diagonal ranks around 20 at double precision.

mod hodlr;
mod toeplitz;

pub use hodlr::{HodlrFactor, HodlrKernel, HodlrOptions};
pub use toeplitz::SymmetricToeplitz;
