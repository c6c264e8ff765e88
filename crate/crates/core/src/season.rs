//! Intraday seasonal profiles.
//!
//! Returns are normalized bucket by bucket, a bucket being a fixed position
//! on the daily sampling grid.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{Duration, NaiveTime};

use crate::error::{Error, Result};
use crate::ingest::{SampledSeries, SeriesKind};
use crate::util::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    MeanAbsolute,
    Mean,
}

/// How the second (signed-mean) pass is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MeanPass {
    #[default]
    Subtract,
    Divide,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalProfile {
    pub statistic: Statistic,
    /// One value per bucket.
    pub values: Vec<f64>,
    /// Observations per bucket.
    pub counts: Vec<usize>,
    pub grid_step: f64,
    pub session_open: Option<NaiveTime>,
}

impl SeasonalProfile {
    pub fn bucket_count(&self) -> usize {
        self.values.len()
    }

    /// Largest over smallest bucket value.
    pub fn max_min_ratio(&self) -> f64 {
        let max = self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        max / min
    }

    pub fn scaled(&self, k: f64) -> SeasonalProfile {
        SeasonalProfile {
            values: self.values.iter().map(|v| v * k).collect(),
            ..self.clone()
        }
    }

    /// `bucket,time_of_day,value`; the time of day is the end of the
    /// bucket's return interval, or empty without a calendar.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "bucket,time_of_day,value")?;
        for (b, v) in self.values.iter().enumerate() {
            let tod = self
                .session_open
                .map(|open| {
                    let t = open + Duration::seconds(((b + 1) as f64 * self.grid_step).round() as i64);
                    t.format("%H:%M:%S").to_string()
                })
                .unwrap_or_default();
            writeln!(w, "{b},{tod},{}", fmt_f64(*v))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ProfileOptions {
    /// Width of a centred moving average applied to the profile; 0 or 1 disables it.
    pub smoothing_width: usize,
}

/// Averages `statistic` over days for every bucket.
pub fn fit_profile(
    returns: &SampledSeries,
    statistic: Statistic,
    opts: &ProfileOptions,
) -> Result<SeasonalProfile> {
    if returns.kind != SeriesKind::LogReturn {
        return Err(Error::validation("seasonal profiles need a log-return series"));
    }
    if returns.day_count() < 2 {
        return Err(Error::validation("seasonal profiles need at least two days"));
    }
    let buckets = returns.buckets_per_day();
    let mut sums = vec![0.0; buckets];
    let mut counts = vec![0usize; buckets];
    for d in 0..returns.day_count() {
        for i in returns.day_range(d) {
            let b = returns.bucket(i);
            if b >= buckets {
                return Err(Error::validation(format!(
                    "day {d} has a value in bucket {b}, beyond the {buckets} buckets per day"
                )));
            }
            let v = returns.values[i];
            sums[b] += match statistic {
                Statistic::MeanAbsolute => v.abs(),
                Statistic::Mean => v,
            };
            counts[b] += 1;
        }
    }
    let mut values = Vec::with_capacity(buckets);
    for b in 0..buckets {
        if counts[b] == 0 {
            return Err(Error::EmptyBucket { bucket: b });
        }
        values.push(sums[b] / counts[b] as f64);
    }
    if opts.smoothing_width > 1 {
        values = moving_average(&values, opts.smoothing_width);
    }
    if statistic == Statistic::MeanAbsolute {
        if let Some(b) = values.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::DegenerateProfile { bucket: b });
        }
    }
    Ok(SeasonalProfile {
        statistic,
        values,
        counts,
        grid_step: returns.grid_step,
        session_open: returns.calendar.as_ref().map(|c| c.session_open),
    })
}

/// Centred moving average, shrinking the window at the ends.
fn moving_average(v: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    (0..v.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(v.len());
            v[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

fn check_layout(returns: &SampledSeries, profile: &SeasonalProfile) -> Result<()> {
    if returns.kind != SeriesKind::LogReturn {
        return Err(Error::validation("deseasonalization needs a log-return series"));
    }
    if returns.buckets_per_day() != profile.bucket_count() {
        return Err(Error::validation(format!(
            "profile has {} buckets but the series has {} per day",
            profile.bucket_count(),
            returns.buckets_per_day()
        )));
    }
    Ok(())
}

/// `x_t = y_t / profile[bucket(t)]`.
pub fn deseasonalize(returns: &SampledSeries, profile: &SeasonalProfile) -> Result<SampledSeries> {
    if profile.statistic != Statistic::MeanAbsolute {
        return Err(Error::validation("deseasonalize needs a mean-absolute profile"));
    }
    check_layout(returns, profile)?;
    if let Some(b) = profile.values.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::DegenerateProfile { bucket: b });
    }
    let mut out = returns.clone();
    for (i, v) in out.values.iter_mut().enumerate() {
        *v /= profile.values[returns.bucket(i)];
    }
    Ok(out)
}

/// Removes the per-bucket signed mean.
pub fn deseasonalize_mean(
    returns: &SampledSeries,
    pass: MeanPass,
    opts: &ProfileOptions,
) -> Result<SampledSeries> {
    let profile = fit_profile(returns, Statistic::Mean, opts)?;
    check_layout(returns, &profile)?;
    let mut out = returns.clone();
    match pass {
        MeanPass::Subtract => {
            for (i, v) in out.values.iter_mut().enumerate() {
                *v -= profile.values[returns.bucket(i)];
            }
        }
        MeanPass::Divide => {
            if let Some(b) = profile.values.iter().position(|&m| m == 0.0) {
                return Err(Error::DegenerateProfile { bucket: b });
            }
            for (i, v) in out.values.iter_mut().enumerate() {
                *v /= profile.values[returns.bucket(i)];
            }
        }
    }
    Ok(out)
}
