use std::cell::RefCell;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use chrono::Datelike;
use rayon::prelude::*;

use super::laplace::{posterior_mode_with, predicted_start, LaplaceOptions, LatentPrior, PosteriorMode};
use crate::error::{Error, Result};
use crate::ingest::{SampledSeries, SeriesKind};
use crate::mrw::{MrwParams, LAMBDA_MAX};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::util::{fmt_f64, sample_sd};

/// How the decorrelation time `T` is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TPolicy {
    /// `T` equals the window length `n·Δt`.
    WindowLength,
    /// A fixed value in seconds.
    Fixed(f64),
    /// `ln T` joins the search, within `[ln 2Δt, ln 10nΔt]`.
    Estimate,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub lambda_max: f64,
    /// `ln σ` is searched within `ln sd(x) ± log_sigma_half_width`.
    pub log_sigma_half_width: f64,
    pub lambda_start: f64,
    /// Extra simplex searches started from the best point so far. They stop
    /// early once a restart no longer improves the optimum.
    pub restarts: usize,
    pub t_policy: TPolicy,
    pub nelder_mead: NelderMeadOptions,
    pub laplace: LaplaceOptions,
    /// Windows with a larger share of exactly zero returns are rejected.
    pub max_zero_fraction: f64,
    /// Below this many observations a warning is logged.
    pub min_observations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lambda_max: LAMBDA_MAX,
            log_sigma_half_width: 5.0,
            lambda_start: 0.4,
            restarts: 3,
            t_policy: TPolicy::WindowLength,
            nelder_mead: NelderMeadOptions {
                max_evaluations: 300,
                xtol: 5e-4,
                ftol: 1e-5,
            },
            laplace: LaplaceOptions::default(),
            max_zero_fraction: 0.5,
            min_observations: 100,
        }
    }
}

/// Half-open index range of a window plus its calendar labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub start_index: usize,
    pub end_index: usize,
    pub start_label: String,
    pub end_label: String,
}

impl Window {
    fn of(series: &SampledSeries, range: std::ops::Range<usize>) -> Self {
        let label = |i: usize| match series.timestamp(i) {
            Some(t) => crate::ingest::format_timestamp(t),
            None => i.to_string(),
        };
        Self {
            start_label: if range.is_empty() { range.start.to_string() } else { label(range.start) },
            end_label: if range.is_empty() { range.end.to_string() } else { label(range.end - 1) },
            start_index: range.start,
            end_index: range.end,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: MrwParams,
    pub log_likelihood: f64,
    pub n: usize,
    pub converged: bool,
    /// Simplex iterations over all restarts.
    pub iterations: usize,
    pub evaluations: usize,
    pub window: Option<Window>,
    /// Diagnostic of a failed fit.
    pub error: Option<String>,
}

impl FitResult {
    /// `λ=0.43, σ=3.33e-3`.
    pub fn summary(&self) -> String {
        format!("λ={:.2}, σ={:.2e}", self.params.lambda, self.params.sigma)
    }
}

/// Warm-start state carried between objective evaluations.
struct Warm {
    params: MrwParams,
    mode: PosteriorMode,
}

/// Maximizes the Laplace likelihood of `x` over `(λ, ln σ)` (and `ln T`
/// under [`TPolicy::Estimate`]).
pub fn fit_returns(x: &[f64], dt: f64, opts: &FitOptions) -> Result<FitResult> {
    let n = x.len();
    if n < 2 {
        return Err(Error::validation("a fit needs at least two observations"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::validation("grid step must be positive"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("returns must be finite"));
    }
    if n < opts.min_observations {
        log::warn!("fitting only {n} observations (recommended at least {})", opts.min_observations);
    }
    let zeros = x.iter().filter(|&&v| v == 0.0).count();
    if zeros as f64 > opts.max_zero_fraction * n as f64 {
        return Err(Error::validation(format!(
            "{zeros} of {n} returns are exactly zero (constant-price artifact)"
        )));
    }
    let sd = sample_sd(x);
    if !(sd > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let log_sd = sd.ln();
    let window_ratio = n as f64;
    let (estimate_t, fixed_ratio) = match opts.t_policy {
        TPolicy::WindowLength => (false, window_ratio),
        TPolicy::Fixed(t) => {
            if !(t >= dt) {
                return Err(Error::validation(format!("T = {t} s is shorter than the grid step {dt} s")));
            }
            (false, t / dt)
        }
        TPolicy::Estimate => (true, window_ratio),
    };
    let t_bounds = (2f64.ln(), (10.0 * window_ratio).ln());

    let decode = |z: &[f64]| -> Option<MrwParams> {
        let lambda = z[0].abs();
        if lambda > opts.lambda_max || z[1].abs() > opts.log_sigma_half_width {
            return None;
        }
        let t_ratio = if estimate_t {
            if z[2] < t_bounds.0 || z[2] > t_bounds.1 {
                return None;
            }
            z[2].exp()
        } else {
            fixed_ratio
        };
        Some(MrwParams {
            lambda,
            sigma: (log_sd + z[1]).exp(),
            t_seconds: t_ratio * dt,
            dt_seconds: dt,
        })
    };

    let warm: RefCell<Option<Warm>> = RefCell::new(None);
    let mut prior_cache: Option<(u64, Arc<LatentPrior>)> = None;
    let mut failures = 0usize;
    let mut last_error = None;
    let mut objective = |z: &[f64]| -> f64 {
        let Some(params) = decode(z) else {
            return f64::INFINITY;
        };
        let t_ratio = params.t_ratio();
        let prior = match &prior_cache {
            Some((bits, p)) if *bits == t_ratio.to_bits() => p.clone(),
            _ => {
                let p = LatentPrior::shared(n, t_ratio);
                prior_cache = Some((t_ratio.to_bits(), p.clone()));
                p
            }
        };
        let mut state = warm.borrow_mut();
        let start = state
            .as_ref()
            .filter(|w| w.params.t_ratio() == t_ratio)
            .map(|w| predicted_start(&w.mode, &w.params, &params, &prior));
        let reference = state.as_ref().map(|w| &w.mode.factor);
        let mut result = posterior_mode_with(x, &params, &prior, start.as_deref(), reference, &opts.laplace);
        if result.is_err() && reference.is_some() {
            result = posterior_mode_with(x, &params, &prior, None, None, &opts.laplace);
        }
        match result {
            Ok(mode) => {
                let value = -mode.log_likelihood;
                *state = Some(Warm { params, mode });
                if value.is_finite() {
                    value
                } else {
                    f64::INFINITY
                }
            }
            Err(e) => {
                log::debug!("likelihood failed at λ={}, σ={}: {e}", params.lambda, params.sigma);
                failures += 1;
                last_error = Some(e.to_string());
                f64::INFINITY
            }
        }
    };

    let mut x0 = vec![opts.lambda_start, 0.0];
    let mut steps = vec![0.1, 0.1];
    if estimate_t {
        x0.push(window_ratio.ln().min(t_bounds.1));
        steps.push(-0.5);
    }
    let mut run = nelder_mead(&mut objective, &x0, &steps, &opts.nelder_mead);
    let mut iterations = run.iterations;
    let mut evaluations = run.evaluations;
    let mut best = (run.x.clone(), run.value);
    let mut converged = run.converged;
    for _ in 0..opts.restarts {
        if !best.1.is_finite() {
            break;
        }
        let previous = best.1;
        let restart_steps: Vec<f64> = steps.iter().map(|s| 0.25 * s).collect();
        run = nelder_mead(&mut objective, &best.0, &restart_steps, &opts.nelder_mead);
        iterations += run.iterations;
        evaluations += run.evaluations;
        if run.value < best.1 {
            best = (run.x.clone(), run.value);
        }
        converged = run.converged;
        if converged && previous - best.1 <= opts.nelder_mead.ftol {
            break;
        }
    }

    let Some(params) = decode(&best.0).filter(|_| best.1.is_finite()) else {
        return Err(last_error.map_or(
            Error::FitNonConvergence {
                best_lambda: f64::NAN,
                best_sigma: f64::NAN,
                best_loglik: f64::NAN,
            },
            Error::Factorization,
        ));
    };
    if !converged {
        return Err(Error::FitNonConvergence {
            best_lambda: params.lambda,
            best_sigma: params.sigma,
            best_loglik: -best.1,
        });
    }
    if failures > 0 {
        log::debug!("{failures} likelihood evaluations failed; last: {last_error:?}");
    }
    Ok(FitResult {
        params,
        log_likelihood: -best.1,
        n,
        converged,
        iterations,
        evaluations,
        window: None,
        error: None,
    })
}

/// Fits a log-return series as a whole.
pub fn fit_mrw(series: &SampledSeries, opts: &FitOptions) -> Result<FitResult> {
    if series.kind != SeriesKind::LogReturn {
        return Err(Error::validation("fits need a log-return series"));
    }
    let mut r = fit_returns(&series.values, series.grid_step, opts)?;
    r.window = Some(Window::of(series, 0..series.len()));
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowRule {
    CalendarMonth,
    CalendarYear,
    /// Equal-count split into this many windows.
    FixedCount(usize),
}

impl WindowRule {
    pub fn as_str(&self) -> String {
        match self {
            WindowRule::CalendarMonth => "calendar-month".into(),
            WindowRule::CalendarYear => "calendar-year".into(),
            WindowRule::FixedCount(k) => format!("fixed-count:{k}"),
        }
    }
}

/// Near-equal split of `0..n` into `k` contiguous ranges; the first `n mod k` are one longer.
pub fn equal_splits(n: usize, k: usize) -> Vec<std::ops::Range<usize>> {
    let base = n / k;
    let extra = n % k;
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}

/// Window index ranges under `rule`.
pub fn window_ranges(series: &SampledSeries, rule: WindowRule) -> Result<Vec<(std::ops::Range<usize>, String)>> {
    match rule {
        WindowRule::FixedCount(k) => {
            if k == 0 {
                return Err(Error::validation("window count must be positive"));
            }
            Ok(equal_splits(series.len(), k)
                .into_iter()
                .enumerate()
                .map(|(i, r)| (r, format!("segment {}", i + 1)))
                .collect())
        }
        WindowRule::CalendarMonth | WindowRule::CalendarYear => {
            let cal = series
                .calendar
                .as_ref()
                .ok_or_else(|| Error::validation("calendar windows need a series with dates"))?;
            let key = |d: usize| {
                let date = cal.days[d].date;
                match rule {
                    WindowRule::CalendarMonth => date.year() * 12 + date.month0() as i32,
                    _ => date.year(),
                }
            };
            let label = |k: i32| match rule {
                WindowRule::CalendarMonth => format!("{:04}-{:02}", k.div_euclid(12), k.rem_euclid(12) + 1),
                _ => format!("{k:04}"),
            };
            let mut out: Vec<(std::ops::Range<usize>, String)> = Vec::new();
            let mut current: Option<i32> = None;
            for d in 0..series.day_count() {
                let k = key(d);
                let r = series.day_range(d);
                match current {
                    Some(c) if c == k => out.last_mut().unwrap().0.end = r.end,
                    Some(c) if k < c => {
                        return Err(Error::validation("calendar days are not in order"));
                    }
                    _ => {
                        if let Some(c) = current {
                            for gap in c + 1..k {
                                out.push((r.start..r.start, label(gap)));
                            }
                        }
                        out.push((r, label(k)));
                        current = Some(k);
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Ordered window fits.
#[derive(Debug, Clone)]
pub struct EstimateSeries {
    pub rule: WindowRule,
    pub results: Vec<FitResult>,
}

impl EstimateSeries {
    pub fn lambdas(&self) -> Vec<f64> {
        self.results.iter().map(|r| r.params.lambda).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// `window_start,window_end,n,lambda,sigma,T_seconds,loglik,converged`.
    pub fn write_csv_to<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "window_start,window_end,n,lambda,sigma,T_seconds,loglik,converged")?;
        for r in &self.results {
            let win = r.window.as_ref();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                win.map_or("", |w| w.start_label.as_str()),
                win.map_or("", |w| w.end_label.as_str()),
                r.n,
                fmt_f64(r.params.lambda),
                fmt_f64(r.params.sigma),
                fmt_f64(r.params.t_seconds),
                fmt_f64(r.log_likelihood),
                r.converged
            )?;
        }
        Ok(())
    }

    /// Reads the `lambda` column and window labels back.
    pub fn read_csv(path: &Path, rule: WindowRule) -> Result<EstimateSeries> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut results = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i as u64 + 2;
            let num = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        message: format!("invalid field {k}"),
                    })
            };
            let n = num(2)? as usize;
            let converged = rec.get(7) == Some("true");
            results.push(FitResult {
                params: MrwParams {
                    lambda: num(3)?,
                    sigma: num(4)?,
                    t_seconds: num(5)?,
                    dt_seconds: f64::NAN,
                },
                log_likelihood: num(6)?,
                n,
                converged,
                iterations: 0,
                evaluations: 0,
                window: Some(Window {
                    start_index: 0,
                    end_index: 0,
                    start_label: rec.get(0).unwrap_or("").to_string(),
                    end_label: rec.get(1).unwrap_or("").to_string(),
                }),
                error: None,
            });
        }
        Ok(EstimateSeries { rule, results })
    }
}

/// Independent fits per window, run concurrently and returned in window
/// order. A failed fit is kept as a non-converged entry.
pub fn fit_windows(series: &SampledSeries, rule: WindowRule, opts: &FitOptions) -> Result<EstimateSeries> {
    if series.kind != SeriesKind::LogReturn {
        return Err(Error::validation("fits need a log-return series"));
    }
    let ranges = window_ranges(series, rule)?;
    if let Some((i, (_, label))) = ranges.iter().enumerate().find(|(_, (r, _))| r.is_empty()) {
        return Err(Error::EmptyWindow {
            index: i,
            label: label.clone(),
        });
    }
    let results = ranges
        .par_iter()
        .map(|(range, _)| {
            let window = Window::of(series, range.clone());
            let x = &series.values[range.clone()];
            match fit_returns(x, series.grid_step, opts) {
                Ok(mut r) => {
                    r.window = Some(window);
                    r
                }
                Err(e) => {
                    let (lambda, sigma, ll) = match &e {
                        Error::FitNonConvergence {
                            best_lambda,
                            best_sigma,
                            best_loglik,
                        } => (*best_lambda, *best_sigma, *best_loglik),
                        _ => (f64::NAN, f64::NAN, f64::NAN),
                    };
                    FitResult {
                        params: MrwParams {
                            lambda,
                            sigma,
                            t_seconds: x.len() as f64 * series.grid_step,
                            dt_seconds: series.grid_step,
                        },
                        log_likelihood: ll,
                        n: x.len(),
                        converged: false,
                        iterations: 0,
                        evaluations: 0,
                        window: Some(window),
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    Ok(EstimateSeries { rule, results })
}
