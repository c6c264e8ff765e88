//! Multifractal analysis of high-frequency asset returns.
//!
//! The crate covers the whole chain from raw quotes to a significance
//! statement about time-varying intermittency:
//!
//! * [`ingest`]: quote files, per-second mid quotes, regular sampling, log-returns.
//! * [`season`]: intraday seasonal profiles and deseasonalization.
//! * [`scaling`]: ACF, power spectrum, wavelet and difference structure functions.
//! * [`mrw`]: the multifractal random walk model and its exact simulation.
//! * [`mle`]: Laplace-approximated likelihood and windowed estimation of `(λ, σ, T)`.
//! * [`mctest`]: Monte Carlo null distribution of the range of windowed `λ` estimates.
//! * [`spread`]: investment-grade spread construction and comparison with `λ` series.

pub mod error;
pub mod ingest;
pub mod linalg;
pub mod mctest;
pub mod mle;
pub mod mrw;
pub mod optim;
pub mod rng;
pub mod scaling;
pub mod season;
pub mod spread;
pub mod util;

pub use error::{Error, Result};
pub use ingest::{SampledSeries, SeriesKind};
pub use mrw::MrwParams;
