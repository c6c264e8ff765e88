//! Investment-grade spread and its comparison with `λ` estimates.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate};

use crate::error::{Error, Result};
use crate::mle::EstimateSeries;
use crate::util::{fmt_f64, mean, pearson, sample_sd};

/// Below this many aligned buckets no significance statement is made.
pub const SIGNIFICANCE_MIN_BUCKETS: usize = 8;
pub const COMPARE_MIN_BUCKETS: usize = 4;

fn check_dates(dates: &[NaiveDate]) -> Result<()> {
    if let Some(w) = dates.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::validation(format!("dates not strictly increasing at {}", w[1])));
    }
    Ok(())
}

/// Daily yields in percent per annum.
#[derive(Debug, Clone, PartialEq)]
pub struct YieldSeries {
    pub dates: Vec<NaiveDate>,
    pub rates: Vec<f64>,
}

impl YieldSeries {
    pub fn new(dates: Vec<NaiveDate>, rates: Vec<f64>) -> Result<Self> {
        if dates.len() != rates.len() {
            return Err(Error::validation("dates and rates differ in length"));
        }
        check_dates(&dates)?;
        if rates.iter().any(|r| !r.is_finite()) {
            return Err(Error::validation("rates must be finite"));
        }
        Ok(Self { dates, rates })
    }

    /// `date,rate` with ISO dates.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let header = rdr.headers()?.clone();
        if header.len() < 2 || &header[0] != "date" || &header[1] != "rate" {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: "expected header `date,rate`".into(),
            });
        }
        let mut dates = Vec::new();
        let mut rates = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i as u64 + 2;
            let bad = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            };
            let d = rec.get(0).unwrap_or("");
            dates.push(
                NaiveDate::parse_from_str(d, "%Y-%m-%d").map_err(|e| bad(format!("date `{d}`: {e}")))?,
            );
            let r = rec.get(1).unwrap_or("");
            rates.push(r.trim().parse::<f64>().map_err(|e| bad(format!("rate `{r}`: {e}")))?);
        }
        Self::new(dates, rates)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "date,rate")?;
        for (d, r) in self.dates.iter().zip(&self.rates) {
            writeln!(w, "{d},{}", fmt_f64(*r))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Percentage points.
#[derive(Debug, Clone, PartialEq)]
pub struct SpreadSeries {
    pub dates: Vec<NaiveDate>,
    pub spread: Vec<f64>,
}

impl SpreadSeries {
    /// `date,spread`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "date,spread")?;
        for (d, s) in self.dates.iter().zip(&self.spread) {
            writeln!(w, "{d},{}", fmt_f64(*s))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `aaa − treasury` on the dates present in both.
pub fn investment_grade_spread(aaa: &YieldSeries, treasury: &YieldSeries) -> Result<SpreadSeries> {
    if aaa.dates.is_empty() || treasury.dates.is_empty() {
        return Err(Error::validation("yield series must be non-empty"));
    }
    let mut dates = Vec::new();
    let mut spread = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < aaa.dates.len() && j < treasury.dates.len() {
        match aaa.dates[i].cmp(&treasury.dates[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dates.push(aaa.dates[i]);
                spread.push(aaa.rates[i] - treasury.rates[j]);
                i += 1;
                j += 1;
            }
        }
    }
    if dates.is_empty() {
        return Err(Error::validation("yield series share no dates"));
    }
    Ok(SpreadSeries { dates, spread })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Monthly,
    Annual,
}

impl Aggregation {
    fn label(&self, d: NaiveDate) -> String {
        match self {
            Aggregation::Monthly => format!("{:04}-{:02}", d.year(), d.month()),
            Aggregation::Annual => format!("{:04}", d.year()),
        }
    }
}

/// Per-bucket means; buckets are `YYYY-MM` or `YYYY` labels in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketSeries {
    pub rule: Aggregation,
    pub labels: Vec<String>,
    pub values: Vec<f64>,
    pub counts: Vec<usize>,
}

impl BucketSeries {
    pub fn get(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.values[i])
    }

    /// `bucket,<value_name>,count`.
    pub fn write_csv(&self, path: &Path, value_name: &str) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "bucket,{value_name},count")?;
        for i in 0..self.labels.len() {
            writeln!(w, "{},{},{}", self.labels[i], fmt_f64(self.values[i]), self.counts[i])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Arithmetic mean per calendar bucket. Every observation weighs the same;
/// non-finite values are skipped.
pub fn aggregate(dates: &[NaiveDate], values: &[f64], rule: Aggregation) -> BucketSeries {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (d, v) in dates.iter().zip(values) {
        if !v.is_finite() {
            continue;
        }
        let e = acc.entry(rule.label(*d)).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    let mut out = BucketSeries {
        rule,
        labels: Vec::new(),
        values: Vec::new(),
        counts: Vec::new(),
    };
    for (label, (sum, count)) in acc {
        out.labels.push(label);
        out.values.push(sum / count as f64);
        out.counts.push(count);
    }
    out
}

pub fn aggregate_spread(spread: &SpreadSeries, rule: Aggregation) -> BucketSeries {
    aggregate(&spread.dates, &spread.spread, rule)
}

/// Buckets windows by the date of their first observation; failed windows
/// are skipped.
pub fn aggregate_estimates(estimates: &EstimateSeries, rule: Aggregation) -> Result<BucketSeries> {
    let mut dates = Vec::new();
    let mut values = Vec::new();
    for r in estimates.results.iter().filter(|r| r.converged) {
        let label = r
            .window
            .as_ref()
            .map(|w| w.start_label.as_str())
            .ok_or_else(|| Error::validation("estimate has no window label"))?;
        let date = label
            .get(..10)
            .and_then(|s| NaiveDate::parse_from_str(s, "%Y-%m-%d").ok())
            .ok_or_else(|| Error::validation(format!("window start `{label}` is not a date")))?;
        dates.push(date);
        values.push(r.params.lambda);
    }
    Ok(aggregate(&dates, &values, rule))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub labels: Vec<String>,
    pub lambda_mean: Vec<f64>,
    pub spread_mean: Vec<f64>,
    pub pearson: f64,
}

impl Comparison {
    pub fn bucket_count(&self) -> usize {
        self.labels.len()
    }

    /// `bucket,lambda_mean,spread_mean`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "bucket,lambda_mean,spread_mean")?;
        for i in 0..self.labels.len() {
            writeln!(
                w,
                "{},{},{}",
                self.labels[i],
                fmt_f64(self.lambda_mean[i]),
                fmt_f64(self.spread_mean[i])
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_key_value(&self) -> String {
        let sign = if self.pearson < 0.0 { "negative" } else { "non-negative" };
        let note = if self.bucket_count() < SIGNIFICANCE_MIN_BUCKETS {
            format!("not assessed (fewer than {SIGNIFICANCE_MIN_BUCKETS} buckets)")
        } else {
            "descriptive only".to_string()
        };
        format!(
            "pearson={}\nbuckets={}\nsign={sign}\nsignificance={note}\n",
            self.pearson,
            self.bucket_count()
        )
    }
}

/// Pearson correlation over buckets present in both series.
pub fn compare(lambda: &BucketSeries, spread: &BucketSeries) -> Result<Comparison> {
    if lambda.rule != spread.rule {
        return Err(Error::validation("series are aggregated with different rules"));
    }
    let mut out = Comparison {
        labels: Vec::new(),
        lambda_mean: Vec::new(),
        spread_mean: Vec::new(),
        pearson: f64::NAN,
    };
    for (label, &l) in lambda.labels.iter().zip(&lambda.values) {
        if let Some(s) = spread.get(label) {
            out.labels.push(label.clone());
            out.lambda_mean.push(l);
            out.spread_mean.push(s);
        }
    }
    if out.labels.len() < COMPARE_MIN_BUCKETS {
        return Err(Error::validation(format!(
            "{} aligned buckets, at least {COMPARE_MIN_BUCKETS} needed",
            out.labels.len()
        )));
    }
    out.pearson = pearson(&out.lambda_mean, &out.spread_mean);
    if !out.pearson.is_finite() {
        return Err(Error::ZeroVariance);
    }
    Ok(out)
}

/// Mean and sample standard deviation of `λ` per bucket across stocks.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSeries {
    pub labels: Vec<String>,
    pub mean: Vec<f64>,
    /// NaN for buckets with a single stock.
    pub sd: Vec<f64>,
    pub counts: Vec<usize>,
}

impl EnsembleSeries {
    pub fn as_buckets(&self, rule: Aggregation) -> BucketSeries {
        BucketSeries {
            rule,
            labels: self.labels.clone(),
            values: self.mean.clone(),
            counts: self.counts.clone(),
        }
    }

    /// `bucket,lambda_mean,lambda_sd,stocks`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "bucket,lambda_mean,lambda_sd,stocks")?;
        for i in 0..self.labels.len() {
            writeln!(
                w,
                "{},{},{},{}",
                self.labels[i],
                fmt_f64(self.mean[i]),
                fmt_f64(self.sd[i]),
                self.counts[i]
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn ensemble_average(per_stock: &[BucketSeries]) -> EnsembleSeries {
    let mut acc: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in per_stock {
        for (l, v) in s.labels.iter().zip(&s.values) {
            acc.entry(l.as_str()).or_default().push(*v);
        }
    }
    let mut out = EnsembleSeries {
        labels: Vec::new(),
        mean: Vec::new(),
        sd: Vec::new(),
        counts: Vec::new(),
    };
    for (l, v) in acc {
        out.labels.push(l.to_string());
        out.mean.push(mean(&v));
        out.sd.push(sample_sd(&v));
        out.counts.push(v.len());
    }
    out
}
