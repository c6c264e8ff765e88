//! The multifractal random walk.
//!
//! Returns are `x_t = σ·√(M_t)·ε_t` with `M_t = c·exp(h_t)`, `ε` standard
//! Gaussian white noise and `h` a centred stationary Gaussian process with
//! covariance `λ²·log⁺(T / ((|t−s|+1)·Δt))`. `c = exp(−Var(h)/2)` makes
//! `E[M_t] = 1`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::util::fmt_f64;

/// Default upper bound on admissible `λ`.
pub const LAMBDA_MAX: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MrwParams {
    /// Intermittency.
    pub lambda: f64,
    /// Volatility scale per √(grid step).
    pub sigma: f64,
    /// Decorrelation time in seconds.
    pub t_seconds: f64,
    /// Grid step in seconds.
    pub dt_seconds: f64,
}

impl MrwParams {
    pub fn new(lambda: f64, sigma: f64, t_seconds: f64, dt_seconds: f64) -> Result<Self> {
        let p = Self {
            lambda,
            sigma,
            t_seconds,
            dt_seconds,
        };
        p.validate(LAMBDA_MAX)?;
        Ok(p)
    }

    pub fn validate(&self, lambda_max: f64) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::validation(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.dt_seconds > 0.0 && self.dt_seconds.is_finite()) {
            return Err(Error::validation(format!("dt must be positive, got {}", self.dt_seconds)));
        }
        if !(self.t_seconds >= self.dt_seconds && self.t_seconds.is_finite()) {
            return Err(Error::validation(format!(
                "T ({}) must be at least dt ({})",
                self.t_seconds, self.dt_seconds
            )));
        }
        if !(0.0..=lambda_max).contains(&self.lambda) {
            return Err(Error::validation(format!(
                "lambda must lie in [0, {lambda_max}], got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// `T / Δt`.
    pub fn t_ratio(&self) -> f64 {
        self.t_seconds / self.dt_seconds
    }

    pub fn log_vol_variance(&self) -> f64 {
        log_vol_covariance(self, 0)
    }

    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        writeln!(s, "lambda={}", fmt_f64(self.lambda)).unwrap();
        writeln!(s, "sigma={}", fmt_f64(self.sigma)).unwrap();
        writeln!(s, "T_seconds={}", fmt_f64(self.t_seconds)).unwrap();
        writeln!(s, "dt_seconds={}", fmt_f64(self.dt_seconds)).unwrap();
        s
    }

    pub fn from_key_value(text: &str) -> Result<Self> {
        let map = parse_key_value(text)?;
        let get = |k: &str| -> Result<f64> {
            map.get(k)
                .ok_or_else(|| Error::validation(format!("parameter file lacks `{k}`")))?
                .parse::<f64>()
                .map_err(|e| Error::validation(format!("parameter `{k}`: {e}")))
        };
        Self::new(get("lambda")?, get("sigma")?, get("T_seconds")?, get("dt_seconds")?)
    }
}

/// Parses `key=value` lines, skipping blanks and `#` comments.
pub fn parse_key_value(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::validation(format!("line {}: expected key=value", i + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// `λ² · log⁺(T / ((lag+1)·Δt))`.
pub fn log_vol_covariance(params: &MrwParams, lag: usize) -> f64 {
    params.lambda * params.lambda * unit_covariance(params.t_ratio(), lag)
}

/// Covariance for `λ = 1` as a function of `T/Δt` and lag.
pub fn unit_covariance(t_ratio: f64, lag: usize) -> f64 {
    (t_ratio / (lag as f64 + 1.0)).ln().max(0.0)
}

/// First column of the `λ = 1` covariance matrix for `n` consecutive points.
pub fn unit_covariance_column(t_ratio: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| unit_covariance(t_ratio, k)).collect()
}

/// `c` such that `1/c = E[exp(h_t)]`.
pub fn normalization_constant(params: &MrwParams) -> f64 {
    (-0.5 * params.log_vol_variance()).exp()
}

/// `ζ(q) = (1 + λ²/2)·q/2 − λ²·q²/8`.
pub fn theoretical_zeta(lambda: f64, q: f64) -> f64 {
    let l2 = lambda * lambda;
    (1.0 + 0.5 * l2) * q / 2.0 - l2 * q * q / 8.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimulationMethod {
    /// Circulant embedding, falling back to the sequential recursion when the
    /// embedding is not non-negative definite.
    #[default]
    Auto,
    /// Exact sequential (Durbin–Levinson) factorization, quadratic time.
    Sequential,
}

/// Draws `h_1..h_n` for ensemble member 0.
pub fn simulate_log_volatility(params: &MrwParams, n: usize, seed: u64) -> Result<Vec<f64>> {
    simulate_log_volatility_member(params, n, seed, 0, SimulationMethod::Auto)
}

pub fn simulate_log_volatility_member(
    params: &MrwParams,
    n: usize,
    seed: u64,
    member: u64,
    method: SimulationMethod,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::validation("path length must be at least 1"));
    }
    let column: Vec<f64> = (0..n).map(|k| log_vol_covariance(params, k)).collect();
    if column[0] == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut rng = rng::stream(seed, rng::stream_id(member, Purpose::LogVolatility));
    match method {
        SimulationMethod::Auto => match circulant_sample(&column, &mut rng) {
            Some(h) => Ok(h),
            None => sequential_sample(&column, &mut rng).map_err(|e| {
                Error::Factorization(format!(
                    "circulant embedding has negative eigenvalues; sequential fallback failed: {e}"
                ))
            }),
        },
        SimulationMethod::Sequential => sequential_sample(&column, &mut rng),
    }
}

/// Minimal circulant embedding; `None` when an eigenvalue is below
/// `-1e-10 · max eigenvalue`.
fn circulant_sample(column: &[f64], rng: &mut rand_chacha::ChaCha20Rng) -> Option<Vec<f64>> {
    let n = column.len();
    if n == 1 {
        let z = rng::standard_normals(rng, 1)[0];
        return Some(vec![column[0].sqrt() * z]);
    }
    let m = 2 * (n - 1);
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..n {
        buf[k].re = column[k];
    }
    for k in 1..n - 1 {
        buf[m - k].re = column[k];
    }
    let fft = FftPlanner::new().plan_fft_forward(m);
    fft.process(&mut buf);
    let eig: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let max = eig.iter().cloned().fold(f64::MIN, f64::max);
    if eig.iter().any(|&e| e < -1e-10 * max) {
        return None;
    }
    let z = rng::standard_normals(rng, 2 * m);
    for (k, b) in buf.iter_mut().enumerate() {
        let a = (eig[k].max(0.0) / m as f64).sqrt();
        *b = Complex64::new(a * z[2 * k], a * z[2 * k + 1]);
    }
    fft.process(&mut buf);
    Some(buf[..n].iter().map(|c| c.re).collect())
}

/// Durbin–Levinson innovations recursion.
fn sequential_sample(column: &[f64], rng: &mut rand_chacha::ChaCha20Rng) -> Result<Vec<f64>> {
    let n = column.len();
    let z = rng::standard_normals(rng, n);
    let mut h = Vec::with_capacity(n);
    let mut phi: Vec<f64> = Vec::with_capacity(n);
    let mut prev: Vec<f64> = Vec::with_capacity(n);
    let mut v = column[0];
    h.push(v.sqrt() * z[0]);
    for t in 1..n {
        let acc: f64 = (1..t).map(|j| phi[j - 1] * column[t - j]).sum();
        let kappa = (column[t] - acc) / v;
        prev.clear();
        prev.extend_from_slice(&phi);
        phi.clear();
        for j in 1..t {
            phi.push(prev[j - 1] - kappa * prev[t - j - 1]);
        }
        phi.push(kappa);
        v *= 1.0 - kappa * kappa;
        if !(v > 0.0) {
            return Err(Error::Factorization(format!(
                "covariance matrix is singular at order {t} (innovation variance {v:e})"
            )));
        }
        let pred: f64 = (1..=t).map(|j| phi[j - 1] * h[t - j]).sum();
        h.push(pred + v.sqrt() * z[t]);
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrwPath {
    pub returns: Vec<f64>,
    pub log_vol: Option<Vec<f64>>,
    pub params: MrwParams,
    pub seed: u64,
    pub member: u64,
}

pub fn simulate_mrw(params: &MrwParams, n: usize, seed: u64) -> Result<MrwPath> {
    simulate_mrw_member(params, n, seed, 0, true)
}

/// Member `member` of the ensemble keyed by `seed`. The `h` and `ε` draws
/// come from separate streams.
pub fn simulate_mrw_member(
    params: &MrwParams,
    n: usize,
    seed: u64,
    member: u64,
    retain_log_vol: bool,
) -> Result<MrwPath> {
    let h = simulate_log_volatility_member(params, n, seed, member, SimulationMethod::Auto)?;
    let c = normalization_constant(params);
    let mut eps_rng = rng::stream(seed, rng::stream_id(member, Purpose::Innovations));
    let eps = rng::standard_normals(&mut eps_rng, n);
    let returns = h
        .iter()
        .zip(&eps)
        .map(|(&hv, &e)| params.sigma * (c * hv.exp()).sqrt() * e)
        .collect();
    Ok(MrwPath {
        returns,
        log_vol: retain_log_vol.then_some(h),
        params: *params,
        seed,
        member,
    })
}

impl MrwPath {
    /// Writes `index,x,h`; `h` is empty when not retained.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(b"index,x,h\n")?;
        for (i, x) in self.returns.iter().enumerate() {
            let h = self
                .log_vol
                .as_ref()
                .map(|h| fmt_f64(h[i]))
                .unwrap_or_default();
            writeln!(out, "{},{},{}", i, fmt_f64(*x), h)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Reads the `x` column of an `index,x,h` file.
pub fn read_path_returns(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let x = rec.get(1).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 2,
            message: "expected a numeric `x` column".into(),
        })?;
        out.push(x);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::{mean, sample_sd};

    fn params(lambda: f64, t_ratio: f64) -> MrwParams {
        MrwParams::new(lambda, 1.0, t_ratio, 1.0).unwrap()
    }

    #[test]
    fn covariance_values() {
        let p = params(0.5, 1000.0);
        // 0.25 * ln(1000)
        assert!((log_vol_covariance(&p, 0) - 1.726938).abs() < 1e-6);
        assert_eq!(log_vol_covariance(&p, 999), 0.0);
        assert_eq!(log_vol_covariance(&p, 5000), 0.0);
        assert_eq!(log_vol_covariance(&params(0.0, 1000.0), 3), 0.0);
        for lag in 0..1200 {
            assert!(log_vol_covariance(&p, lag + 1) <= log_vol_covariance(&p, lag));
        }
    }

    #[test]
    fn normalization_constant_values() {
        assert_eq!(normalization_constant(&params(0.0, 1000.0)), 1.0);
        assert_eq!(normalization_constant(&params(0.7, 1.0)), 1.0);
        let c = normalization_constant(&params(0.5, 1000.0));
        // exp(-0.863469) = 0.4216967
        assert!((c - 0.4216967).abs() < 1e-6, "{c}");
    }

    #[test]
    fn zeta_values() {
        for l in [0.0, 0.2, 0.49, 0.9] {
            assert!((theoretical_zeta(l, 2.0) - 1.0).abs() < 1e-15);
        }
        assert_eq!(theoretical_zeta(0.0, 3.0), 1.5);
        assert!((theoretical_zeta(0.49, 4.0) - 1.75990).abs() < 5e-6);
        let q: Vec<f64> = (0..20).map(|i| 0.1 + 0.3 * i as f64).collect();
        for w in q.windows(3) {
            let d2 = theoretical_zeta(0.4, w[0]) - 2.0 * theoretical_zeta(0.4, w[1])
                + theoretical_zeta(0.4, w[2]);
            assert!(d2 < 0.0);
            let lin = theoretical_zeta(0.0, w[0]) - 2.0 * theoretical_zeta(0.0, w[1])
                + theoretical_zeta(0.0, w[2]);
            assert!(lin.abs() < 1e-15);
        }
    }

    #[test]
    fn params_validation() {
        assert!(MrwParams::new(0.5, 0.0, 10.0, 1.0).is_err());
        assert!(MrwParams::new(0.5, 1.0, 0.5, 1.0).is_err());
        assert!(MrwParams::new(1.2, 1.0, 10.0, 1.0).is_err());
        assert!(MrwParams::new(0.5, 1.0, 10.0, 1.0).is_ok());
    }

    #[test]
    fn params_key_value_round_trip() {
        let p = MrwParams::new(0.45, 2.5e-3, 565440.0, 120.0).unwrap();
        assert_eq!(MrwParams::from_key_value(&p.to_key_value()).unwrap(), p);
    }

    #[test]
    fn zero_lambda_gives_zero_field_and_gaussian_returns() {
        let p = MrwParams::new(0.0, 2.0, 1e5, 1.0).unwrap();
        assert!(simulate_log_volatility(&p, 100, 3).unwrap().iter().all(|&h| h == 0.0));
        let path = simulate_mrw(&p, 100_000, 11).unwrap();
        let sd = sample_sd(&path.returns);
        assert!((sd / 2.0 - 1.0).abs() < 0.02, "{sd}");
    }

    #[test]
    fn two_point_covariance_matches() {
        // 10^4 independent draws of (h_1, h_2); compare sample covariance with the model.
        let p = params(0.6, 50.0);
        let draws: Vec<(f64, f64)> = (0..10_000)
            .map(|m| {
                let h = simulate_log_volatility_member(&p, 2, 99, m, SimulationMethod::Auto).unwrap();
                (h[0], h[1])
            })
            .collect();
        let prods: Vec<f64> = draws.iter().map(|(a, b)| a * b).collect();
        let est = mean(&prods);
        let se = sample_sd(&prods) / (prods.len() as f64).sqrt();
        let truth = log_vol_covariance(&p, 1);
        assert!((est - truth).abs() < 3.0 * se, "{est} vs {truth} (se {se})");
    }

    #[test]
    fn long_path_variance() {
        let p = params(0.5, 256.0);
        let h = simulate_log_volatility(&p, 200_000, 5).unwrap();
        let var = h.iter().map(|v| v * v).sum::<f64>() / h.len() as f64;
        let truth = p.log_vol_variance();
        assert!((var / truth - 1.0).abs() < 0.05, "{var} vs {truth}");
    }

    #[test]
    fn sequential_and_circulant_agree_in_distribution() {
        let p = params(0.5, 40.0);
        let m = 4000;
        let mut acc = [[0.0; 2]; 3];
        for member in 0..m {
            for (slot, method) in [SimulationMethod::Auto, SimulationMethod::Sequential]
                .into_iter()
                .enumerate()
            {
                let h = simulate_log_volatility_member(&p, 12, 8, member, method).unwrap();
                acc[0][slot] += h[0] * h[0];
                acc[1][slot] += h[0] * h[3];
                acc[2][slot] += h[2] * h[11];
            }
        }
        for (k, lag) in [(0, 0), (1, 3), (2, 9)] {
            let truth = log_vol_covariance(&p, lag);
            for slot in 0..2 {
                let est = acc[k][slot] / m as f64;
                assert!((est - truth).abs() < 0.06, "lag {lag} method {slot}: {est} vs {truth}");
            }
        }
    }

    #[test]
    fn mean_of_m_is_one() {
        let p = params(0.5, 4096.0);
        let h = simulate_log_volatility(&p, 1 << 16, 21).unwrap();
        let c = normalization_constant(&p);
        let m: Vec<f64> = h.iter().map(|v| c * v.exp()).collect();
        // Strong dependence: use batch means over blocks longer than T for the error bar.
        let blocks: Vec<f64> = m.chunks(4096).map(mean).collect();
        let se = sample_sd(&blocks) / (blocks.len() as f64).sqrt();
        assert!((mean(&m) - 1.0).abs() < 3.0 * se, "{} (se {se})", mean(&m));
    }

    #[test]
    fn determinism_and_sigma_scaling() {
        let p = params(0.5, 1000.0);
        let a = simulate_mrw(&p, 5000, 42).unwrap();
        let b = simulate_mrw(&p, 5000, 42).unwrap();
        assert_eq!(a, b);
        let p2 = MrwParams { sigma: 2.0, ..p };
        let c = simulate_mrw(&p2, 5000, 42).unwrap();
        for (x, y) in a.returns.iter().zip(&c.returns) {
            assert_eq!(2.0 * x, *y);
        }
    }
}
