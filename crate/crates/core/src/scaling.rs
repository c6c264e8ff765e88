//! Nonparametric scaling diagnostics: autocorrelation, power spectrum,
//! wavelet and difference structure functions, and the scaling function
//! `ζ(q)` fitted from them.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::mrw::theoretical_zeta;
use crate::util::{fmt_f64, log_spaced, ols};

/// Mother wavelet support, in units of the scale.
pub const WAVELET_SUPPORT: f64 = 5.0;
/// Scales per decade of the default grid.
pub const SCALES_PER_DECADE: usize = 20;

/// `{0.1, 0.6, …, 4.1}`.
pub fn default_q_grid() -> Vec<f64> {
    (0..9).map(|i| 0.1 + 0.5 * i as f64).collect()
}

/// Twenty log-spaced scales per decade over `[4, n/20]` grid steps.
pub fn default_scales(n: usize) -> Vec<f64> {
    let hi = n as f64 / 20.0;
    if hi < 4.0 {
        return Vec::new();
    }
    log_spaced(4.0, hi, SCALES_PER_DECADE)
}

fn write_rows(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for r in rows {
        writeln!(w, "{r}")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcfTransform {
    Identity,
    Absolute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcfResult {
    pub lags: Vec<usize>,
    pub values: Vec<f64>,
    /// `1.96/√n`.
    pub band: f64,
}

impl AcfResult {
    /// Share of lags ≥ 1 whose value lies inside `±band`.
    pub fn fraction_inside_band(&self) -> f64 {
        let inner: Vec<_> = self.lags.iter().zip(&self.values).filter(|(l, _)| **l > 0).collect();
        inner.iter().filter(|(_, v)| v.abs() <= self.band).count() as f64 / inner.len() as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(
            path,
            "lag,value,band",
            self.lags
                .iter()
                .zip(&self.values)
                .map(|(l, v)| format!("{l},{},{}", fmt_f64(*v), fmt_f64(self.band))),
        )
    }
}

/// Sample autocorrelation with the biased `1/n` normalization.
pub fn acf(x: &[f64], max_lag: usize, transform: AcfTransform) -> Result<AcfResult> {
    let n = x.len();
    if n < 2 || 2 * max_lag >= n {
        return Err(Error::validation(format!(
            "max lag {max_lag} must be below half the series length {n}"
        )));
    }
    let y: Vec<f64> = match transform {
        AcfTransform::Identity => x.to_vec(),
        AcfTransform::Absolute => x.iter().map(|v| v.abs()).collect(),
    };
    let mean = y.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let var = c.iter().map(|v| v * v).sum::<f64>();
    if !(var > 0.0) {
        return Err(Error::ZeroVariance);
    }
    // Autocovariances for all lags through one zero-padded FFT.
    let m = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let mut buf: Vec<Complex64> = c.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(m, Complex64::new(0.0, 0.0));
    fwd.process(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex64::new(z.norm_sqr(), 0.0);
    }
    inv.process(&mut buf);
    let c0 = buf[0].re;
    let values = (0..=max_lag)
        .map(|k| if k == 0 { 1.0 } else { (buf[k].re / c0).clamp(-1.0, 1.0) })
        .collect();
    Ok(AcfResult {
        lags: (0..=max_lag).collect(),
        values,
        band: 1.96 / (n as f64).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Cycles per second.
    pub frequency: Vec<f64>,
    pub power: Vec<f64>,
}

impl Spectrum {
    /// OLS slope of `log P` against `log f` over `lo ≤ f ≤ hi`.
    pub fn log_log_slope(&self, lo: f64, hi: f64) -> Result<f64> {
        let (lf, lp): (Vec<f64>, Vec<f64>) = self
            .frequency
            .iter()
            .zip(&self.power)
            .filter(|(f, p)| **f >= lo && **f <= hi && **p > 0.0)
            .map(|(f, p)| (f.ln(), p.ln()))
            .unzip();
        if lf.len() < 3 {
            return Err(Error::validation("fewer than three spectral points in the fit range"));
        }
        Ok(ols(&lf, &lp).slope)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(
            path,
            "frequency,power",
            self.frequency
                .iter()
                .zip(&self.power)
                .map(|(f, p)| format!("{},{}", fmt_f64(*f), fmt_f64(*p))),
        )
    }
}

/// Number of Welch segments.
pub const PSD_SEGMENTS: usize = 8;

/// Welch estimate: eight half-overlapping, mean-removed, Hann-tapered
/// segments. One-sided density in units of `value²·s`; the zero frequency is
/// omitted.
pub fn psd(x: &[f64], dt: f64) -> Result<Spectrum> {
    let n = x.len();
    if n < 256 {
        return Err(Error::validation("power spectra need at least 256 samples"));
    }
    let len = 2 * n / (PSD_SEGMENTS + 1);
    let hop = len / 2;
    let window: Vec<f64> = (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos())
        .collect();
    let wss: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(len);
    let half = len / 2;
    let mut acc = vec![0.0; half];
    for s in 0..PSD_SEGMENTS {
        let seg = &x[s * hop..s * hop + len];
        let mean = seg.iter().sum::<f64>() / len as f64;
        let mut buf: Vec<Complex64> = seg
            .iter()
            .zip(&window)
            .map(|(v, w)| Complex64::new((v - mean) * w, 0.0))
            .collect();
        fft.process(&mut buf);
        for k in 1..=half {
            let scale = if k == half && len.is_multiple_of(2) { 1.0 } else { 2.0 };
            acc[k - 1] += scale * dt * buf[k].norm_sqr() / wss;
        }
    }
    Ok(Spectrum {
        frequency: (1..=half).map(|k| k as f64 / (len as f64 * dt)).collect(),
        power: acc.iter().map(|p| p / PSD_SEGMENTS as f64).collect(),
    })
}

/// First derivative of a Gaussian up to sign, `ψ(u) = −u·e^{−u²/2}`.
pub fn dog1(u: f64) -> f64 {
    -u * (-0.5 * u * u).exp()
}

/// Wavelet coefficients at one scale, for the valid times only.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletScale {
    pub scale: f64,
    /// Time index of `coefficients[0]`.
    pub first_time: usize,
    pub coefficients: Vec<f64>,
}

/// `W(t,τ) = τ^{-1/2} Σ_k X(t−k) ψ(k/τ)`, with `|k| ≤ 5τ`. Only times whose
/// whole support lies inside the series are kept.
///
/// The sum is evaluated on the increments of `X`, so constants contribute
/// exactly nothing.
pub fn cwt_dog1(x: &[f64], scales: &[f64]) -> Result<Vec<WaveletScale>> {
    let n = x.len();
    for &s in scales {
        if !(s >= 2.0 && s <= n as f64 / 8.0) {
            return Err(Error::validation(format!(
                "scale {s} outside [2, {}]",
                n as f64 / 8.0
            )));
        }
    }
    let incr: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let mut planner = FftPlanner::new();
    scales
        .iter()
        .map(|&tau| {
            let k_max = (WAVELET_SUPPORT * tau).floor() as usize;
            if 2 * k_max + 1 > n {
                return Err(Error::EmptyScale { scale: tau });
            }
            let norm = 1.0 / tau.sqrt();
            let d: Vec<f64> = (0..=k_max).map(|k| norm * dog1(k as f64 / tau)).collect();
            // Tail sums S_j = Σ_{k ≥ j} d_k; the kernel on x_{t−m} is −S_{max(m+1, −m)}.
            let mut tail = vec![0.0; k_max + 2];
            for k in (1..=k_max).rev() {
                tail[k] = tail[k + 1] + d[k];
            }
            // Offsets m ∈ [−K, K−1]; kernel index m + K.
            let kernel: Vec<f64> = (0..2 * k_max)
                .map(|i| {
                    let m = i as i64 - k_max as i64;
                    let j = (m + 1).max(-m) as usize;
                    -tail[j]
                })
                .collect();
            let first = k_max;
            let last = n - 1 - k_max;
            let count = last + 1 - first;
            // W(t) = Σ_m c_m x_{t−m}, with x_j = incr[j−1].
            let coefficients = convolve_valid(&incr, &kernel, k_max, first, count, &mut planner);
            Ok(WaveletScale {
                scale: tau,
                first_time: first,
                coefficients,
            })
        })
        .collect()
}

/// `out[i] = Σ_m kernel[m+K]·incr[t−m−1]` for `t = first + i`.
fn convolve_valid(
    incr: &[f64],
    kernel: &[f64],
    k_max: usize,
    first: usize,
    count: usize,
    planner: &mut FftPlanner<f64>,
) -> Vec<f64> {
    let len = (incr.len() + kernel.len()).next_power_of_two();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let mut a: Vec<Complex64> = incr.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    a.resize(len, Complex64::new(0.0, 0.0));
    let mut b: Vec<Complex64> = kernel.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    b.resize(len, Complex64::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (u, v) in a.iter_mut().zip(&b) {
        *u *= v;
    }
    inv.process(&mut a);
    // (incr * kernel)[p] = Σ_i kernel[i]·incr[p−i]; with i = m+K and p−i = t−m−1, p = t+K−1.
    let scale = 1.0 / len as f64;
    (0..count)
        .map(|i| a[first + i + k_max - 1].re * scale)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructureMethod {
    Wavelet,
    Difference,
}

impl StructureMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            StructureMethod::Wavelet => "wavelet",
            StructureMethod::Difference => "difference",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureFunctions {
    pub method: StructureMethod,
    pub q_grid: Vec<f64>,
    /// Grid steps, strictly increasing.
    pub scales: Vec<f64>,
    /// `moments[i][j] = M(q_i, τ_j)`.
    pub moments: Vec<Vec<f64>>,
    /// Scales used by [`fit_scaling_function`], inclusive.
    pub fit_range: (f64, f64),
}

impl StructureFunctions {
    pub fn with_fit_range(mut self, lo: f64, hi: f64) -> Self {
        self.fit_range = (lo, hi);
        self
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows = self.q_grid.iter().enumerate().flat_map(|(i, q)| {
            self.scales
                .iter()
                .zip(&self.moments[i])
                .map(move |(t, m)| format!("{},{},{}", fmt_f64(*q), fmt_f64(*t), fmt_f64(*m)))
        });
        write_rows(path, "q,tau,moment", rows)
    }
}

fn check_q(q_grid: &[f64]) -> Result<()> {
    if q_grid.is_empty() || q_grid.iter().any(|q| !(q.is_finite() && *q >= 0.0)) {
        return Err(Error::validation("moment orders must be finite and non-negative"));
    }
    Ok(())
}

fn abs_moments(values: &[f64], q_grid: &[f64]) -> Vec<f64> {
    q_grid
        .iter()
        .map(|&q| {
            if q == 0.0 {
                return 1.0;
            }
            values.iter().map(|v| v.abs().powf(q)).sum::<f64>() / values.len() as f64
        })
        .collect()
}

fn transpose(per_scale: Vec<Vec<f64>>, nq: usize) -> Vec<Vec<f64>> {
    (0..nq).map(|i| per_scale.iter().map(|m| m[i]).collect()).collect()
}

/// `M(q,τ)` = time average of `|W(t,τ)|^q` over valid `t`.
pub fn wavelet_structure_functions(x: &[f64], q_grid: &[f64], scales: &[f64]) -> Result<StructureFunctions> {
    check_q(q_grid)?;
    if scales.is_empty() {
        return Err(Error::validation("no scales"));
    }
    let coeffs = cwt_dog1(x, scales)?;
    let per_scale: Vec<Vec<f64>> = coeffs
        .iter()
        .map(|c| abs_moments(&c.coefficients, q_grid))
        .collect();
    Ok(StructureFunctions {
        method: StructureMethod::Wavelet,
        q_grid: q_grid.to_vec(),
        scales: scales.to_vec(),
        moments: transpose(per_scale, q_grid.len()),
        fit_range: (scales[0], *scales.last().unwrap()),
    })
}

/// `M(q,τ)` = average of `|X(s+τ) − X(s)|^q`; scales are rounded to whole
/// grid steps and duplicates dropped.
pub fn difference_structure_functions(x: &[f64], q_grid: &[f64], scales: &[f64]) -> Result<StructureFunctions> {
    check_q(q_grid)?;
    let mut lags: Vec<usize> = scales.iter().map(|s| s.round().max(1.0) as usize).collect();
    lags.dedup();
    if lags.is_empty() {
        return Err(Error::validation("no scales"));
    }
    let mut per_scale = Vec::with_capacity(lags.len());
    for &lag in &lags {
        if lag >= x.len() {
            return Err(Error::EmptyScale { scale: lag as f64 });
        }
        let d: Vec<f64> = (0..x.len() - lag).map(|s| x[s + lag] - x[s]).collect();
        per_scale.push(abs_moments(&d, q_grid));
    }
    let scales: Vec<f64> = lags.iter().map(|&l| l as f64).collect();
    Ok(StructureFunctions {
        method: StructureMethod::Difference,
        q_grid: q_grid.to_vec(),
        fit_range: (scales[0], *scales.last().unwrap()),
        scales,
        moments: transpose(per_scale, q_grid.len()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub q_grid: Vec<f64>,
    pub zeta_hat: Vec<f64>,
    pub stderr: Vec<f64>,
    pub r2: Vec<f64>,
}

impl ScalingReport {
    pub fn zeta_at(&self, q: f64) -> Option<f64> {
        self.q_grid
            .iter()
            .position(|&g| (g - q).abs() < 1e-9)
            .map(|i| self.zeta_hat[i])
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(
            path,
            "q,zeta,stderr,r2",
            (0..self.q_grid.len()).map(|i| {
                format!(
                    "{},{},{},{}",
                    fmt_f64(self.q_grid[i]),
                    fmt_f64(self.zeta_hat[i]),
                    fmt_f64(self.stderr[i]),
                    fmt_f64(self.r2[i])
                )
            }),
        )
    }
}

/// Per-`q` log-log OLS slope over the fit range. The wavelet method's
/// `τ^{q/2}` factor is removed.
pub fn fit_scaling_function(sf: &StructureFunctions) -> Result<ScalingReport> {
    let (lo, hi) = sf.fit_range;
    let idx: Vec<usize> = (0..sf.scales.len())
        .filter(|&j| sf.scales[j] >= lo * (1.0 - 1e-12) && sf.scales[j] <= hi * (1.0 + 1e-12))
        .collect();
    if idx.len() < 5 {
        return Err(Error::validation(format!(
            "fit range [{lo}, {hi}] holds {} scales, at least 5 needed",
            idx.len()
        )));
    }
    let lt: Vec<f64> = idx.iter().map(|&j| sf.scales[j].ln()).collect();
    let mut report = ScalingReport {
        q_grid: sf.q_grid.clone(),
        zeta_hat: Vec::new(),
        stderr: Vec::new(),
        r2: Vec::new(),
    };
    for (i, &q) in sf.q_grid.iter().enumerate() {
        let mut lm = Vec::with_capacity(idx.len());
        for &j in &idx {
            let m = sf.moments[i][j];
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::validation(format!(
                    "non-positive moment at q={q}, scale {}",
                    sf.scales[j]
                )));
            }
            lm.push(m.ln());
        }
        let fit = ols(&lt, &lm);
        let offset = match sf.method {
            StructureMethod::Wavelet => q / 2.0,
            StructureMethod::Difference => 0.0,
        };
        report.zeta_hat.push(fit.slope - offset);
        report.stderr.push(fit.slope_stderr.max(0.0));
        report.r2.push(fit.r2);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaFit {
    pub lambda: f64,
    /// The unconstrained optimum has `λ² < 0` (convex `ζ̂`); `lambda` is then 0.
    pub degenerate: bool,
}

/// Weighted least squares of `ζ(q) = q/2 + λ²(q/4 − q²/8)` in `λ²`, weights
/// `1/stderr²`. Uniform weights are used when some stderr is zero.
pub fn fit_lambda_to_zeta(report: &ScalingReport) -> Result<LambdaFit> {
    if report.q_grid.len() < 4 {
        return Err(Error::validation("a λ fit needs at least four moment orders"));
    }
    let uniform = report.stderr.iter().any(|s| !(*s > 0.0 && s.is_finite()));
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..report.q_grid.len() {
        let q = report.q_grid[i];
        let g = theoretical_zeta(1.0, q) - theoretical_zeta(0.0, q);
        let y = report.zeta_hat[i] - theoretical_zeta(0.0, q);
        let w = if uniform { 1.0 } else { 1.0 / (report.stderr[i] * report.stderr[i]) };
        num += w * g * y;
        den += w * g * g;
    }
    if !(den > 0.0) {
        return Err(Error::validation("moment orders carry no information on λ"));
    }
    let mu = num / den;
    Ok(if mu < 0.0 {
        LambdaFit {
            lambda: 0.0,
            degenerate: true,
        }
    } else {
        LambdaFit {
            lambda: mu.sqrt(),
            degenerate: false,
        }
    })
}
