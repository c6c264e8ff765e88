//! Monte Carlo test for time variation of `λ`.
//!
//! Constant-parameter MRW paths are split into equal segments, each segment
//! is fitted, and the range `max λ̂ − min λ̂` of every path forms the null
//! distribution against which an observed range is placed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mle::{equal_splits, fit_returns, EstimateSeries, FitOptions};
use crate::mrw::{simulate_mrw_member, MrwParams};
use crate::util::{fmt_f64, quantile_sorted};

/// Below this size a warning about quantile stability is logged.
pub const MIN_STABLE_ENSEMBLE: usize = 100;
/// Largest tolerated share of failed ensemble members.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

/// `max λ̂ − min λ̂` over equal-count segments of `returns`.
pub fn segment_ranges(returns: &[f64], dt: f64, segment_count: usize, opts: &FitOptions) -> Result<f64> {
    if segment_count == 0 || segment_count > returns.len() {
        return Err(Error::validation(format!(
            "cannot split {} returns into {segment_count} segments",
            returns.len()
        )));
    }
    if segment_count == 1 {
        return Ok(0.0);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (segment, range) in equal_splits(returns.len(), segment_count).into_iter().enumerate() {
        let fit = fit_returns(&returns[range], dt, opts).map_err(|e| Error::Segment {
            segment,
            source: Box::new(e),
        })?;
        lo = lo.min(fit.params.lambda);
        hi = hi.max(fit.params.lambda);
    }
    Ok(hi - lo)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NullSettings {
    pub params: MrwParams,
    /// Path length in grid steps.
    pub n: usize,
    pub segment_count: usize,
    pub ensemble_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeDistribution {
    /// Members that produced a range; equals `ranges.len()`.
    pub ensemble_size: usize,
    /// Members requested, failures included.
    pub requested: usize,
    pub failed: usize,
    pub segment_count: usize,
    /// Ascending.
    pub ranges: Vec<f64>,
    pub null_params: MrwParams,
    pub n: usize,
    pub seed: u64,
}

impl RangeDistribution {
    pub fn quantile(&self, p: f64) -> f64 {
        quantile_sorted(&self.ranges, p)
    }

    /// Share of null ranges at or above `observed`.
    pub fn upper_tail(&self, observed: f64) -> f64 {
        let below = self.ranges.partition_point(|&r| r < observed);
        (self.ranges.len() - below) as f64 / self.ranges.len() as f64
    }

    /// `rank,range` with ranks from 1.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "rank,range")?;
        for (i, r) in self.ranges.iter().enumerate() {
            writeln!(w, "{},{}", i + 1, fmt_f64(*r))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, settings: &NullSettings) -> Result<RangeDistribution> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut ranges = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let v = rec.get(1).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 2,
                message: "expected a numeric `range` column".into(),
            })?;
            ranges.push(v);
        }
        if ranges.is_empty() {
            return Err(Error::validation("empty range distribution"));
        }
        ranges.sort_by(f64::total_cmp);
        Ok(RangeDistribution {
            ensemble_size: ranges.len(),
            requested: ranges.len(),
            failed: 0,
            segment_count: settings.segment_count,
            ranges,
            null_params: settings.params,
            n: settings.n,
            seed: settings.seed,
        })
    }
}

/// Simulates `ensemble_size` independent paths and collects their segment
/// ranges. Member `i` draws from the streams of index `i`, so the result does
/// not depend on scheduling.
pub fn build_null_distribution(settings: &NullSettings, opts: &FitOptions) -> Result<RangeDistribution> {
    let NullSettings {
        params,
        n,
        segment_count,
        ensemble_size,
        seed,
    } = *settings;
    if ensemble_size == 0 {
        return Err(Error::validation("ensemble size must be positive"));
    }
    if ensemble_size < MIN_STABLE_ENSEMBLE {
        log::warn!("ensemble of {ensemble_size} paths; tail quantiles will be unstable");
    }
    params.validate(opts.lambda_max)?;
    let done = AtomicUsize::new(0);
    let outcomes: Vec<Result<f64>> = (0..ensemble_size as u64)
        .into_par_iter()
        .map(|member| {
            let path = simulate_mrw_member(&params, n, seed, member, false)?;
            let r = segment_ranges(&path.returns, params.dt_seconds, segment_count, opts);
            let k = done.fetch_add(1, Ordering::Relaxed) + 1;
            log::info!("ensemble member {member} done ({k}/{ensemble_size})");
            if let Err(e) = &r {
                log::warn!("ensemble member {member} failed: {e}");
            }
            r
        })
        .collect();
    let failed = outcomes.iter().filter(|r| r.is_err()).count();
    if failed as f64 > MAX_FAILURE_FRACTION * ensemble_size as f64 {
        return Err(Error::Ensemble {
            failed,
            total: ensemble_size,
        });
    }
    let mut ranges: Vec<f64> = outcomes.into_iter().filter_map(|r| r.ok()).collect();
    ranges.sort_by(f64::total_cmp);
    Ok(RangeDistribution {
        ensemble_size: ranges.len(),
        requested: ensemble_size,
        failed,
        segment_count,
        ranges,
        null_params: params,
        n,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceReport {
    pub observed_range: f64,
    /// Upper-tail share of null ranges `≥ observed_range`.
    pub p_value: f64,
    pub q025: f64,
    pub q975: f64,
    pub ensemble_size: usize,
}

impl SignificanceReport {
    /// Shortest round-trip decimal; an empty tail is written `<1/N`.
    pub fn p_value_text(&self) -> String {
        if self.p_value == 0.0 {
            format!("<{}", 1.0 / self.ensemble_size as f64)
        } else {
            self.p_value.to_string()
        }
    }

    pub fn to_key_value(&self) -> String {
        format!(
            "observed_range={}\np_value={}\nq025={}\nq975={}\nensemble_size={}\n",
            self.observed_range,
            self.p_value_text(),
            self.q025,
            self.q975,
            self.ensemble_size
        )
    }
}

/// Places the range of an observed set of window estimates in `dist`.
pub fn significance_test(observed: &EstimateSeries, dist: &RangeDistribution) -> Result<SignificanceReport> {
    if observed.results.len() != dist.segment_count {
        return Err(Error::validation(format!(
            "observed series has {} windows, null distribution has {} segments",
            observed.results.len(),
            dist.segment_count
        )));
    }
    let lambdas = observed.lambdas();
    if lambdas.iter().any(|l| !l.is_finite()) {
        return Err(Error::validation("observed series contains failed windows"));
    }
    let hi = lambdas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = lambdas.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(test_range(hi - lo, dist))
}

pub fn test_range(observed_range: f64, dist: &RangeDistribution) -> SignificanceReport {
    SignificanceReport {
        observed_range,
        p_value: dist.upper_tail(observed_range),
        q025: dist.quantile(0.025),
        q975: dist.quantile(0.975),
        ensemble_size: dist.ensemble_size,
    }
}
