//! Quote files, per-second mid quotes and regularly sampled series.
//!
//! A trading day is turned into a per-second mid-quote path, which is
//! sampled on a grid anchored at the session open. Log-returns are only
//! taken within a day.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime, Timelike};

use crate::error::{Error, Result};
use crate::util::fmt_f64;

const TIMESTAMP_FORMATS: [&str; 2] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"];

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s.trim(), f).ok())
}

pub fn format_timestamp(t: NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S").to_string()
}

/// Daily trading hours.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Session {
    pub open: NaiveTime,
    pub close: NaiveTime,
}

impl Session {
    pub fn new(open: NaiveTime, close: NaiveTime) -> Result<Self> {
        if close <= open {
            return Err(Error::validation(format!(
                "session close {close} must be after open {open}"
            )));
        }
        Ok(Self { open, close })
    }

    /// Parses `HH:MM[:SS]`.
    pub fn parse_time(s: &str) -> Result<NaiveTime> {
        NaiveTime::parse_from_str(s.trim(), "%H:%M:%S")
            .or_else(|_| NaiveTime::parse_from_str(s.trim(), "%H:%M"))
            .map_err(|_| Error::validation(format!("invalid time of day {s:?}")))
    }

    pub fn seconds(&self) -> u32 {
        (self.close - self.open).num_seconds() as u32
    }

    pub fn contains(&self, t: NaiveTime) -> bool {
        t >= self.open && t <= self.close
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuoteTick {
    pub timestamp: NaiveDateTime,
    pub bid: f64,
    pub ask: f64,
}

impl QuoteTick {
    pub fn mid(&self) -> f64 {
        0.5 * (self.bid + self.ask)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradingDay {
    pub date: NaiveDate,
    pub session: Session,
    /// Sorted by timestamp.
    pub ticks: Vec<QuoteTick>,
}

/// Ticks that were read but fall outside the session.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadSummary {
    pub rows: usize,
    pub outside_session: usize,
}

/// Reads a `timestamp,bid,ask` quote file. Ticks outside the session hours
/// are dropped and counted.
pub fn load_quotes(path: &Path, session: Session) -> Result<(Vec<TradingDay>, LoadSummary)> {
    let file = File::open(path)?;
    read_quotes(file, path, session)
}

pub fn read_quotes<R: Read>(
    reader: R,
    source: &Path,
    session: Session,
) -> Result<(Vec<TradingDay>, LoadSummary)> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["timestamp", "bid", "ask"] {
        return Err(parse_err(1, "expected header timestamp,bid,ask".into()));
    }
    let mut by_date: BTreeMap<NaiveDate, Vec<QuoteTick>> = BTreeMap::new();
    let mut summary = LoadSummary::default();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(parse_err(line, format!("expected 3 fields, found {}", record.len())));
        }
        let timestamp = parse_timestamp(&record[0])
            .ok_or_else(|| parse_err(line, format!("invalid timestamp {:?}", &record[0])))?;
        let price = |i: usize, name: &str| -> Result<f64> {
            let v: f64 = record[i]
                .parse()
                .map_err(|_| parse_err(line, format!("invalid {name} {:?}", &record[i])))?;
            if !(v.is_finite() && v > 0.0) {
                return Err(parse_err(line, format!("{name} must be positive, found {v}")));
            }
            Ok(v)
        };
        let bid = price(1, "bid")?;
        let ask = price(2, "ask")?;
        if ask <= bid {
            return Err(Error::validation(format!(
                "{}:{line}: crossed or locked quote at {} (bid {bid}, ask {ask})",
                source.display(),
                format_timestamp(timestamp)
            )));
        }
        summary.rows += 1;
        if !session.contains(timestamp.time()) {
            summary.outside_session += 1;
            continue;
        }
        by_date
            .entry(timestamp.date())
            .or_default()
            .push(QuoteTick { timestamp, bid, ask });
    }
    let days = by_date
        .into_iter()
        .map(|(date, mut ticks)| {
            ticks.sort_by_key(|t| t.timestamp);
            TradingDay { date, session, ticks }
        })
        .collect();
    Ok((days, summary))
}

/// Drops days whose first tick comes later than `open + max_delay`.
pub fn filter_late_days(days: Vec<TradingDay>, max_delay: Duration) -> Vec<TradingDay> {
    days.into_iter()
        .filter(|d| match d.ticks.first() {
            Some(t) => t.timestamp.time() <= d.session.open + max_delay,
            None => false,
        })
        .collect()
}

/// One mid-quote price per second, from the first tick of the day through
/// the session close (both ends included).
#[derive(Debug, Clone, PartialEq)]
pub struct SecondSeries {
    pub date: NaiveDate,
    pub session: Session,
    /// Time of day of `prices[0]`.
    pub start: NaiveTime,
    pub prices: Vec<f64>,
}

impl SecondSeries {
    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    /// Price at second `t` of the day, if covered.
    pub fn at(&self, t: NaiveTime) -> Option<f64> {
        if t < self.start {
            return None;
        }
        let k = (t - self.start).num_seconds() as usize;
        self.prices.get(k).copied()
    }
}

pub fn mid_quote_series(day: &TradingDay) -> Result<SecondSeries> {
    let first = day.ticks.first().ok_or(Error::EmptyDay { date: day.date })?;
    let start = first.timestamp.time().with_nanosecond(0).expect("valid time");
    let len = (day.session.close - start).num_seconds() as usize + 1;
    let mut prices = Vec::with_capacity(len);
    let mut next = 0;
    let mut current = first.mid();
    for k in 0..len {
        let second = start + Duration::seconds(k as i64);
        while next < day.ticks.len() && day.ticks[next].timestamp.time() <= second {
            current = day.ticks[next].mid();
            next += 1;
        }
        prices.push(current);
    }
    Ok(SecondSeries {
        date: day.date,
        session: day.session,
        start,
        prices,
    })
}

/// Lengths, in seconds, of the maximal runs of equal consecutive prices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentStats {
    pub segment_lengths: Vec<u64>,
    pub total_segments: usize,
}

impl SegmentStats {
    /// Number of segments longer than `tau` seconds.
    pub fn survival(&self, tau: u64) -> usize {
        self.segment_lengths.iter().filter(|&&l| l > tau).count()
    }

    pub fn merge(mut self, other: SegmentStats) -> SegmentStats {
        self.segment_lengths.extend(other.segment_lengths);
        self.total_segments = self.segment_lengths.len();
        self
    }
}

pub fn constant_price_segments(prices: &[f64]) -> SegmentStats {
    let mut segment_lengths = Vec::new();
    let mut run = 0u64;
    for (i, &p) in prices.iter().enumerate() {
        if i > 0 && p != prices[i - 1] {
            segment_lengths.push(run);
            run = 0;
        }
        run += 1;
    }
    if run > 0 {
        segment_lengths.push(run);
    }
    SegmentStats {
        total_segments: segment_lengths.len(),
        segment_lengths,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    LogPrice,
    LogReturn,
}

impl SeriesKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SeriesKind::LogPrice => "log-price",
            SeriesKind::LogReturn => "log-return",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DayInfo {
    pub date: NaiveDate,
    /// Grid bucket of the day's first value.
    pub first_bucket: usize,
}

/// Where each value sits in calendar time.
#[derive(Debug, Clone, PartialEq)]
pub struct Calendar {
    pub session_open: NaiveTime,
    /// One entry per day, parallel to `SampledSeries::day_boundaries`.
    pub days: Vec<DayInfo>,
    /// Number of grid buckets in a full day.
    pub buckets_per_day: usize,
}

/// A regular-grid series split into trading days.
///
/// For a log-price series bucket `b` is the sample at `open + b·Δt`. For a
/// log-return series bucket `b` is the return over `[open + b·Δt, open + (b+1)·Δt]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSeries {
    pub values: Vec<f64>,
    /// Seconds.
    pub grid_step: f64,
    /// Index of each day's first value; starts at 0, strictly increasing.
    pub day_boundaries: Vec<usize>,
    pub kind: SeriesKind,
    pub calendar: Option<Calendar>,
}

impl SampledSeries {
    /// A calendar-free series forming a single block.
    pub fn from_values(values: Vec<f64>, grid_step: f64, kind: SeriesKind) -> Self {
        Self {
            values,
            grid_step,
            day_boundaries: vec![0],
            kind,
            calendar: None,
        }
    }

    /// Lays `values` out over consecutive weekdays starting at `start`, with
    /// full days of `buckets_per_day` values (the last day may be partial).
    pub fn on_weekdays(
        values: Vec<f64>,
        kind: SeriesKind,
        start: NaiveDate,
        session_open: NaiveTime,
        grid_step: f64,
        buckets_per_day: usize,
    ) -> Self {
        assert!(buckets_per_day > 0);
        let mut date = start;
        let mut days = Vec::new();
        let mut day_boundaries = Vec::new();
        let mut i = 0;
        while i < values.len() {
            while matches!(date.format("%a").to_string().as_str(), "Sat" | "Sun") {
                date = date.succ_opt().expect("date in range");
            }
            day_boundaries.push(i);
            days.push(DayInfo { date, first_bucket: 0 });
            i += buckets_per_day;
            date = date.succ_opt().expect("date in range");
        }
        if values.is_empty() {
            day_boundaries.push(0);
            days.push(DayInfo { date, first_bucket: 0 });
        }
        Self {
            values,
            grid_step,
            day_boundaries,
            kind,
            calendar: Some(Calendar {
                session_open,
                days,
                buckets_per_day,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn day_count(&self) -> usize {
        self.day_boundaries.len()
    }

    /// Index range of day `d`.
    pub fn day_range(&self, d: usize) -> std::ops::Range<usize> {
        let start = self.day_boundaries[d];
        let end = self
            .day_boundaries
            .get(d + 1)
            .copied()
            .unwrap_or(self.values.len());
        start..end
    }

    pub fn day_of(&self, i: usize) -> usize {
        self.day_boundaries.partition_point(|&b| b <= i) - 1
    }

    /// Grid bucket of value `i` within its day.
    pub fn bucket(&self, i: usize) -> usize {
        let d = self.day_of(i);
        let first = self
            .calendar
            .as_ref()
            .map_or(0, |c| c.days[d].first_bucket);
        first + i - self.day_boundaries[d]
    }

    /// Bucket count of a full day: from the calendar, or the longest day.
    pub fn buckets_per_day(&self) -> usize {
        match &self.calendar {
            Some(c) => c.buckets_per_day,
            None => (0..self.day_count())
                .map(|d| self.day_range(d).len())
                .max()
                .unwrap_or(0),
        }
    }

    /// Calendar time of value `i`; a return is stamped at the end of its interval.
    pub fn timestamp(&self, i: usize) -> Option<NaiveDateTime> {
        let cal = self.calendar.as_ref()?;
        let d = self.day_of(i);
        let mut b = self.bucket(i) as f64;
        if self.kind == SeriesKind::LogReturn {
            b += 1.0;
        }
        let secs = (b * self.grid_step).round() as i64;
        Some(cal.days[d].date.and_time(cal.session_open) + Duration::seconds(secs))
    }

    /// A sub-series over `range`, keeping calendar information.
    pub fn slice(&self, range: std::ops::Range<usize>) -> SampledSeries {
        let mut day_boundaries = Vec::new();
        let mut days = Vec::new();
        if !range.is_empty() {
            let d0 = self.day_of(range.start);
            for d in d0..self.day_count() {
                let r = self.day_range(d);
                if r.start >= range.end {
                    break;
                }
                let s = r.start.max(range.start);
                day_boundaries.push(s - range.start);
                if let Some(c) = &self.calendar {
                    days.push(DayInfo {
                        date: c.days[d].date,
                        first_bucket: c.days[d].first_bucket + (s - r.start),
                    });
                }
            }
        } else {
            day_boundaries.push(0);
        }
        SampledSeries {
            values: self.values[range].to_vec(),
            grid_step: self.grid_step,
            day_boundaries,
            kind: self.kind,
            calendar: self.calendar.as_ref().map(|c| Calendar {
                session_open: c.session_open,
                days,
                buckets_per_day: c.buckets_per_day,
            }),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// `timestamp,value,day_index`; for calendar-free series the timestamp
    /// column holds the grid offset in seconds.
    pub fn write_csv_to<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "timestamp,value,day_index")?;
        for (i, v) in self.values.iter().enumerate() {
            let ts = match self.timestamp(i) {
                Some(t) => format_timestamp(t),
                None => format!("{}", (i as f64 * self.grid_step)),
            };
            writeln!(w, "{ts},{},{}", fmt_f64(*v), self.day_of(i))?;
        }
        Ok(())
    }
}

/// Reads a sampled-series CSV. Timestamps must lie on the grid
/// `session_open + k·grid_step`; calendar-free files are accepted when the
/// timestamp column is numeric.
pub fn read_sampled_csv(
    path: &Path,
    kind: SeriesKind,
    grid_step: f64,
    session_open: NaiveTime,
    buckets_per_day: Option<usize>,
) -> Result<SampledSeries> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["timestamp", "value", "day_index"] {
        return Err(parse_err(1, "expected header timestamp,value,day_index".into()));
    }
    let mut values = Vec::new();
    let mut day_boundaries = Vec::new();
    let mut days = Vec::new();
    let mut calendar_free = None;
    let mut last_day: Option<usize> = None;
    for record in rdr.records() {
        let record = record.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let value: f64 = record[1]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_err(line, format!("invalid value {:?}", &record[1])))?;
        let day: usize = record[2]
            .parse()
            .map_err(|_| parse_err(line, format!("invalid day index {:?}", &record[2])))?;
        let ts = parse_timestamp(&record[0]);
        let free = ts.is_none();
        if *calendar_free.get_or_insert(free) != free {
            return Err(parse_err(line, "mixed timestamp formats".into()));
        }
        if last_day != Some(day) {
            if last_day.is_some_and(|l| day != l + 1) {
                return Err(parse_err(line, format!("day index {day} out of sequence")));
            }
            if last_day.is_none() && day != 0 {
                return Err(parse_err(line, "day indices must start at 0".into()));
            }
            day_boundaries.push(values.len());
            if let Some(t) = ts {
                let offset = (t.time() - session_open).num_seconds() as f64 / grid_step;
                let mut bucket = offset.round();
                if (offset - bucket).abs() > 1e-9 || bucket < 0.0 {
                    return Err(parse_err(line, "timestamp is off the sampling grid".into()));
                }
                if kind == SeriesKind::LogReturn {
                    bucket -= 1.0;
                }
                if bucket < 0.0 {
                    return Err(parse_err(line, "return stamped at the session open".into()));
                }
                days.push(DayInfo {
                    date: t.date(),
                    first_bucket: bucket as usize,
                });
            }
            last_day = Some(day);
        }
        values.push(value);
    }
    if values.is_empty() {
        return Err(Error::validation(format!("{} holds no values", path.display())));
    }
    let longest = days
        .iter()
        .enumerate()
        .map(|(d, info)| {
            let end = day_boundaries.get(d + 1).copied().unwrap_or(values.len());
            info.first_bucket + end - day_boundaries[d]
        })
        .max()
        .unwrap_or(0);
    let calendar = (calendar_free == Some(false)).then(|| Calendar {
        session_open,
        days,
        buckets_per_day: buckets_per_day.unwrap_or(longest),
    });
    Ok(SampledSeries {
        values,
        grid_step,
        day_boundaries,
        kind,
        calendar,
    })
}

/// Log mid quotes on the grid `open + k·step`, `k = 0..=⌊session/step⌋`.
/// Grid points before the day's first tick are skipped.
pub fn sample_regular(days: &[SecondSeries], step: u32) -> Result<SampledSeries> {
    if step == 0 {
        return Err(Error::validation("sampling step must be at least one second"));
    }
    let session = days
        .first()
        .ok_or_else(|| Error::validation("no trading days to sample"))?
        .session;
    if days.iter().any(|d| d.session != session) {
        return Err(Error::validation("all days must share the same session hours"));
    }
    if step > session.seconds() {
        return Err(Error::validation(format!(
            "sampling step {step} s exceeds the session length {} s",
            session.seconds()
        )));
    }
    let buckets = (session.seconds() / step) as usize + 1;
    let mut values = Vec::new();
    let mut day_boundaries = Vec::new();
    let mut info = Vec::new();
    for day in days {
        if day.is_empty() {
            return Err(Error::EmptyDay { date: day.date });
        }
        let mut first = None;
        for b in 0..buckets {
            let t = session.open + Duration::seconds((b as u32 * step) as i64);
            if let Some(p) = day.at(t) {
                if first.is_none() {
                    first = Some(b);
                    day_boundaries.push(values.len());
                }
                values.push(p.ln());
            }
        }
        match first {
            Some(b) => info.push(DayInfo {
                date: day.date,
                first_bucket: b,
            }),
            None => return Err(Error::EmptyDay { date: day.date }),
        }
    }
    Ok(SampledSeries {
        values,
        grid_step: step as f64,
        day_boundaries,
        kind: SeriesKind::LogPrice,
        calendar: Some(Calendar {
            session_open: session.open,
            days: info,
            buckets_per_day: buckets,
        }),
    })
}

/// First differences within each day. Days left without a return are dropped.
pub fn log_returns(series: &SampledSeries) -> Result<SampledSeries> {
    if series.kind != SeriesKind::LogPrice {
        return Err(Error::validation("log-returns need a log-price series"));
    }
    if series.len() < 2 {
        return Err(Error::validation("log-returns need at least two samples"));
    }
    let mut values = Vec::with_capacity(series.len());
    let mut day_boundaries = Vec::new();
    let mut days = Vec::new();
    for d in 0..series.day_count() {
        let r = series.day_range(d);
        if r.len() < 2 {
            continue;
        }
        day_boundaries.push(values.len());
        if let Some(c) = &series.calendar {
            days.push(c.days[d]);
        }
        values.extend(series.values[r].windows(2).map(|w| w[1] - w[0]));
    }
    if values.is_empty() {
        return Err(Error::validation("no day holds two samples"));
    }
    Ok(SampledSeries {
        values,
        grid_step: series.grid_step,
        day_boundaries,
        kind: SeriesKind::LogReturn,
        calendar: series.calendar.as_ref().map(|c| Calendar {
            session_open: c.session_open,
            days,
            buckets_per_day: c.buckets_per_day.saturating_sub(1),
        }),
    })
}

/// `X(0) = 0`, `X(t) = Σ_{k≤t} x_k`; one value longer than the input.
pub fn cumulate(returns: &SampledSeries) -> Result<SampledSeries> {
    if returns.kind != SeriesKind::LogReturn {
        return Err(Error::validation("cumulate needs a log-return series"));
    }
    let mut values = Vec::with_capacity(returns.len() + 1);
    let mut acc = 0.0;
    values.push(acc);
    for &x in &returns.values {
        acc += x;
        values.push(acc);
    }
    Ok(SampledSeries {
        values,
        grid_step: returns.grid_step,
        day_boundaries: returns.day_boundaries.clone(),
        kind: SeriesKind::LogPrice,
        calendar: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session() -> Session {
        Session::new(
            NaiveTime::from_hms_opt(9, 0, 0).unwrap(),
            NaiveTime::from_hms_opt(16, 36, 0).unwrap(),
        )
        .unwrap()
    }

    fn read(text: &str) -> Result<(Vec<TradingDay>, LoadSummary)> {
        read_quotes(text.as_bytes(), Path::new("quotes.csv"), session())
    }

    #[test]
    fn reads_days_and_preserves_tick_counts() {
        let text = "timestamp,bid,ask\n\
            2008-01-02T09:00:00,100,101\n\
            2008-01-02T09:00:05,100.5,101\n\
            2008-01-03T09:00:01,99,100\n\
            2008-01-02T09:00:03,100,100.5\n";
        let (days, summary) = read(text).unwrap();
        assert_eq!(days.len(), 2);
        assert_eq!(days[0].ticks.len(), 3);
        assert_eq!(days[1].ticks.len(), 1);
        assert_eq!(summary.rows, 4);
        let times: Vec<_> = days[0].ticks.iter().map(|t| t.timestamp.time().second()).collect();
        assert_eq!(times, [0, 3, 5]);
    }

    #[test]
    fn malformed_row_names_its_line() {
        let text = "timestamp,bid,ask\n2008-01-03T09:00:00,100,101\n2008-01-03T09:01:00,bad,101.5\n";
        match read(text) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("bid"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn crossed_and_locked_quotes_are_rejected() {
        for row in ["2008-01-03T09:01:00,101,100", "2008-01-03T09:01:00,100,100"] {
            let text = format!("timestamp,bid,ask\n{row}\n");
            let err = read(&text).unwrap_err();
            assert!(err.is_validation(), "{err}");
            assert!(err.to_string().contains("2008-01-03T09:01:00"));
        }
    }

    #[test]
    fn ticks_outside_the_session_are_dropped() {
        let text = "timestamp,bid,ask\n2008-01-03T08:59:59,1,2\n2008-01-03T09:00:00,1,2\n2008-01-03T16:36:01,1,2\n";
        let (days, summary) = read(text).unwrap();
        assert_eq!(days[0].ticks.len(), 1);
        assert_eq!(summary.outside_session, 2);
    }

    fn day_with_first_tick(offset_min: i64) -> TradingDay {
        let date = NaiveDate::from_ymd_opt(2008, 3, 3).unwrap();
        let t = date.and_time(session().open) + Duration::minutes(offset_min);
        TradingDay {
            date,
            session: session(),
            ticks: vec![QuoteTick { timestamp: t, bid: 1.0, ask: 2.0 }],
        }
    }

    #[test]
    fn late_days_are_removed() {
        let days = vec![day_with_first_tick(0), day_with_first_tick(20), day_with_first_tick(15)];
        let kept = filter_late_days(days.clone(), Duration::minutes(15));
        assert_eq!(kept, vec![days[0].clone(), days[2].clone()]);
        let all = filter_late_days(days.clone(), Duration::seconds(session().seconds() as i64));
        assert_eq!(all.len(), 3);
    }

    #[test]
    fn single_tick_forward_fills_to_close() {
        let mut day = day_with_first_tick(0);
        day.ticks[0].bid = 100.0;
        day.ticks[0].ask = 102.0;
        let s = mid_quote_series(&day).unwrap();
        assert_eq!(s.len(), session().seconds() as usize + 1);
        assert!(s.prices.iter().all(|&p| p == 101.0));
    }

    #[test]
    fn price_switches_after_ten_seconds() {
        let mut day = day_with_first_tick(0);
        let t0 = day.ticks[0].timestamp;
        day.ticks.push(QuoteTick { timestamp: t0 + Duration::seconds(10), bid: 3.0, ask: 4.0 });
        let s = mid_quote_series(&day).unwrap();
        assert!(s.prices[..10].iter().all(|&p| p == 1.5));
        assert_eq!(s.prices[10], 3.5);
    }

    #[test]
    fn empty_day_is_an_error() {
        let mut day = day_with_first_tick(0);
        day.ticks.clear();
        assert!(matches!(mid_quote_series(&day), Err(Error::EmptyDay { .. })));
    }

    #[test]
    fn run_lengths_are_recovered() {
        let prices = [1.0, 1.0, 1.0, 2.0, 3.0, 3.0, 3.0, 3.0, 3.0];
        let s = constant_price_segments(&prices);
        assert_eq!(s.segment_lengths, [3, 1, 5]);
        assert_eq!(s.total_segments, 3);
        assert_eq!(s.survival(2), 2);
        let mono: Vec<f64> = (0..50).map(|i| i as f64).collect();
        assert_eq!(constant_price_segments(&mono).segment_lengths, vec![1; 50]);
        assert_eq!(constant_price_segments(&[4.0; 17]).segment_lengths, [17]);
    }

    #[test]
    fn two_minute_grid_gives_229_samples_per_day() {
        let s = mid_quote_series(&day_with_first_tick(0)).unwrap();
        let sampled = sample_regular(&[s.clone(), s.clone()], 120).unwrap();
        assert_eq!(sampled.len(), 2 * 229);
        assert_eq!(sampled.day_boundaries, [0, 229]);
        let whole = sample_regular(std::slice::from_ref(&s), session().seconds()).unwrap();
        assert_eq!(whole.len(), 2);
        assert!(sample_regular(&[s], session().seconds() + 1).is_err());
    }

    #[test]
    fn late_start_skips_leading_buckets() {
        let s = mid_quote_series(&day_with_first_tick(5)).unwrap();
        let sampled = sample_regular(&[s], 120).unwrap();
        assert_eq!(sampled.len(), 229 - 3);
        assert_eq!(sampled.bucket(0), 3);
        let r = log_returns(&sampled).unwrap();
        assert_eq!(r.bucket(0), 3);
        assert_eq!(r.buckets_per_day(), 228);
    }

    fn price_series(days: &[&[f64]]) -> SampledSeries {
        let mut values = Vec::new();
        let mut bounds = Vec::new();
        for d in days {
            bounds.push(values.len());
            values.extend_from_slice(d);
        }
        SampledSeries {
            values,
            grid_step: 120.0,
            day_boundaries: bounds,
            kind: SeriesKind::LogPrice,
            calendar: None,
        }
    }

    #[test]
    fn returns_stay_within_days() {
        let r = log_returns(&price_series(&[&[0.0, 0.1, 0.3]])).unwrap();
        assert!((r.values[0] - 0.1).abs() < 1e-15 && (r.values[1] - 0.2).abs() < 1e-15);
        let two = log_returns(&price_series(&[&[0.0, 1.0, 3.0], &[10.0, 10.5, 10.0]])).unwrap();
        assert_eq!(two.values, [1.0, 2.0, 0.5, -0.5]);
        assert_eq!(two.day_boundaries, [0, 2]);
        let flat = log_returns(&price_series(&[&[2.0; 5]])).unwrap();
        assert!(flat.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cumulate_prepends_zero() {
        let r = SampledSeries::from_values(vec![0.1, 0.2], 1.0, SeriesKind::LogReturn);
        let x = cumulate(&r).unwrap();
        assert_eq!(x.values.len(), 3);
        assert_eq!(x.values[0], 0.0);
        assert!((x.values[1] - 0.1).abs() < 1e-15);
        assert!((x.values[2] - 0.3).abs() < 1e-15);
        assert!(cumulate(&x).is_err());
    }

    #[test]
    fn csv_round_trip_keeps_calendar() {
        let s = mid_quote_series(&day_with_first_tick(3)).unwrap();
        let sampled = sample_regular(&[s.clone(), s], 120).unwrap();
        let r = log_returns(&sampled).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        r.write_csv(&path).unwrap();
        let back = read_sampled_csv(&path, SeriesKind::LogReturn, 120.0, session().open, Some(228)).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn slices_keep_buckets() {
        let v: Vec<f64> = (0..25).map(|i| i as f64).collect();
        let s = SampledSeries::on_weekdays(
            v,
            SeriesKind::LogReturn,
            NaiveDate::from_ymd_opt(2008, 1, 4).unwrap(),
            session().open,
            120.0,
            10,
        );
        assert_eq!(s.day_boundaries, [0, 10, 20]);
        let dates: Vec<_> = s.calendar.as_ref().unwrap().days.iter().map(|d| d.date.to_string()).collect();
        assert_eq!(dates, ["2008-01-04", "2008-01-07", "2008-01-08"]);
        let part = s.slice(7..22);
        assert_eq!(part.day_boundaries, [0, 3, 13]);
        assert_eq!(part.bucket(0), 7);
        assert_eq!(part.timestamp(0), s.timestamp(7));
        assert_eq!(part.timestamp(14), s.timestamp(21));
    }
}
