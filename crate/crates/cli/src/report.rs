//! Figure data and SVG renderings assembled from earlier artifacts.
//!
//! Every chart is written twice: as `<figure>.csv` (`series,x,y`, every
//! plotted number) and as `<figure>.svg`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mrwlab::mrw::{parse_key_value, theoretical_zeta};
use mrwlab::util::fmt_f64;

use crate::config::{PathList, Settings};
use crate::outputs::Outputs;
use crate::svg::{Chart, Series, Style};
use crate::Failure;

/// Longest series drawn in an SVG; the CSV keeps every point.
const SVG_MAX_POINTS: usize = 4000;

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, Failure> {
        let bad = |e: csv::Error| Failure::Validation(format!("{}: {e}", path.display()));
        let mut rdr = csv::Reader::from_path(path).map_err(bad)?;
        let header = rdr.headers().map_err(bad)?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec.map_err(bad)?.iter().map(str::to_string).collect());
        }
        Ok(Self { header, rows })
    }

    fn column(&self, name: &str) -> Result<Vec<f64>, Failure> {
        let k = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Failure::Validation(format!("column `{name}` missing")))?;
        Ok(self
            .rows
            .iter()
            .map(|r| r.get(k).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN))
            .collect())
    }
}

fn pairs(x: &[f64], y: &[f64]) -> Vec<(f64, f64)> {
    x.iter().copied().zip(y.iter().copied()).collect()
}

fn thin(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let stride = points.len().div_ceil(SVG_MAX_POINTS).max(1);
    points.iter().step_by(stride).copied().collect()
}

fn emit(out: &mut Outputs, name: &str, chart: Chart) -> Result<(), Failure> {
    let mut csv = String::from("series,x,y\n");
    for s in &chart.series {
        for (x, y) in &s.points {
            csv.push_str(&format!("{},{},{}\n", s.label, fmt_f64(*x), fmt_f64(*y)));
        }
    }
    out.write_text(&format!("{name}.csv"), &csv)?;
    let mut drawn = chart;
    for s in &mut drawn.series {
        s.points = thin(&s.points);
    }
    out.write_text(&format!("{name}.svg"), &drawn.render())
}

fn key_values(path: &Path) -> Result<BTreeMap<String, String>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    Ok(parse_key_value(&text)?)
}

fn chart(title: &str, x: &str, y: &str, log_x: bool, log_y: bool, series: Vec<Series>) -> Chart {
    Chart {
        title: title.into(),
        x_label: x.into(),
        y_label: y.into(),
        log_x,
        log_y,
        series,
    }
}

pub fn report(s: &mut Settings, out: &mut Outputs, inputs: Option<PathList>) -> Result<(), Failure> {
    let dirs = s.required("inputs", inputs)?.0;
    if let Some(d) = dirs.iter().find(|d| !d.is_dir()) {
        return Err(Failure::Validation(format!("inputs: no such directory {}", d.display())));
    }
    let find = |name: &str| -> Option<PathBuf> { dirs.iter().map(|d| d.join(name)).find(|p| p.is_file()) };
    let mut figures = 0;

    if let Some(p) = find("segment_survival.csv") {
        let t = Table::read(&p)?;
        let pts = pairs(&t.column("tau_seconds")?, &t.column("segments")?);
        emit(out, "fig1a_segments", chart("Constant-price segments longer than τ", "τ (s)", "segments", true, true, vec![Series::new("segments", pts, Style::Line)]))?;
        figures += 1;
    }
    for (file, name, title) in [
        ("returns.csv", "fig1b_returns", "Log-returns"),
        ("deseasonalized.csv", "fig1d_deseasonalized", "Deseasonalized log-returns"),
    ] {
        if let Some(p) = find(file) {
            let t = Table::read(&p)?;
            let v = t.column("value")?;
            let idx: Vec<f64> = (0..v.len()).map(|i| i as f64).collect();
            emit(out, name, chart(title, "index", "return", false, false, vec![Series::new("return", pairs(&idx, &v), Style::Line)]))?;
            figures += 1;
        }
    }
    if let Some(p) = find("profile.csv") {
        let t = Table::read(&p)?;
        let pts = pairs(&t.column("bucket")?, &t.column("value")?);
        emit(out, "fig1c_profile", chart("Mean absolute return by time of day", "bucket", "mean |y|", false, false, vec![Series::new("profile", pts, Style::Line)]))?;
        figures += 1;
    }
    for (file, name, title) in [
        ("acf.csv", "fig2a_acf", "ACF of returns"),
        ("acf_abs.csv", "fig2b_acf_abs", "ACF of absolute returns"),
    ] {
        if let Some(p) = find(file) {
            let t = Table::read(&p)?;
            let lag = t.column("lag")?;
            let val = t.column("value")?;
            let band = t.column("band")?.first().copied().unwrap_or(f64::NAN);
            let pts: Vec<(f64, f64)> = pairs(&lag, &val).into_iter().filter(|(l, _)| *l >= 1.0).collect();
            let (lo, hi) = (pts.first().map_or(1.0, |p| p.0), pts.last().map_or(1.0, |p| p.0));
            emit(
                out,
                name,
                chart(title, "lag", "ACF", false, false, vec![
                    Series::new("acf", pts, Style::Points),
                    Series::new("+band", vec![(lo, band), (hi, band)], Style::Line),
                    Series::new("-band", vec![(lo, -band), (hi, -band)], Style::Line),
                ]),
            )?;
            figures += 1;
        }
    }
    if let Some(p) = find("psd.csv") {
        let t = Table::read(&p)?;
        let pts = pairs(&t.column("frequency")?, &t.column("power")?);
        let mut series = vec![Series::new("psd", pts.clone(), Style::Line)];
        if let (Some(&(f0, p0)), Some(&(f1, _))) = (pts.first(), pts.last()) {
            series.push(Series::new("1/f^2", vec![(f0, p0), (f1, p0 * (f0 / f1).powi(2))], Style::Line));
        }
        emit(out, "fig2c_psd", chart("Power spectral density", "frequency (Hz)", "power", true, true, series))?;
        figures += 1;
    }
    if let Some(p) = find("structure_wavelet.csv") {
        let t = Table::read(&p)?;
        let (q, tau, m) = (t.column("q")?, t.column("tau")?, t.column("moment")?);
        let mut by_q: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for i in 0..q.len() {
            by_q.entry(format!("q={}", q[i])).or_default().push((tau[i], m[i]));
        }
        let series = by_q.into_iter().map(|(k, v)| Series::new(&k, v, Style::Line)).collect();
        emit(out, "fig2d_structure", chart("Wavelet structure functions", "τ (grid steps)", "M(q,τ)", true, true, series))?;
        figures += 1;
    }
    let wavelet_zeta = find("zeta_wavelet.csv");
    let difference_zeta = find("zeta_difference.csv");
    if wavelet_zeta.is_some() || difference_zeta.is_some() {
        let mut series = Vec::new();
        let mut qs = Vec::new();
        for (path, label) in [(&wavelet_zeta, "wavelet"), (&difference_zeta, "difference")] {
            if let Some(p) = path {
                let t = Table::read(p)?;
                let q = t.column("q")?;
                series.push(Series::new(label, pairs(&q, &t.column("zeta")?), Style::Points));
                qs = q;
            }
        }
        let lambda = find("scaling_summary.txt")
            .map(|p| key_values(&p))
            .transpose()?
            .and_then(|kv| kv.get("lambda_wavelet").and_then(|v| v.parse::<f64>().ok()));
        if let Some(l) = lambda {
            series.push(Series::new(&format!("λ={l:.2}"), qs.iter().map(|&q| (q, theoretical_zeta(l, q))).collect(), Style::Line));
        }
        series.push(Series::new("q/2", qs.iter().map(|&q| (q, q / 2.0)).collect(), Style::Line));
        emit(out, "fig3a_zeta", chart("Scaling function", "q", "ζ(q)", false, false, series))?;
        figures += 1;
    }
    if let Some(p) = find("estimates.csv") {
        let t = Table::read(&p)?;
        let l = t.column("lambda")?;
        let idx: Vec<f64> = (1..=l.len()).map(|i| i as f64).collect();
        emit(out, "fig3b_lambda", chart("λ by window", "window", "λ", false, false, vec![Series::new("lambda", pairs(&idx, &l), Style::Points)]))?;
        figures += 1;
    }
    if let Some(p) = find("null_ranges.csv") {
        let t = Table::read(&p)?;
        let r = t.column("range")?;
        let (lo, hi) = r.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let bins = 20;
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let mut counts = vec![0usize; bins];
        for v in &r {
            counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
        }
        let hist = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| (lo + (i as f64 + 0.5) * width, c as f64 / r.len() as f64))
            .collect();
        let mut series = vec![Series::new("null", hist, Style::Bars)];
        let observed = find("mc_report.txt")
            .map(|p| key_values(&p))
            .transpose()?
            .and_then(|kv| kv.get("observed_range").and_then(|v| v.parse::<f64>().ok()));
        if let Some(o) = observed {
            let top = counts.iter().max().copied().unwrap_or(1) as f64 / r.len() as f64;
            series.push(Series::new("observed", vec![(o, 0.0), (o, top)], Style::Line));
        }
        emit(out, "fig3d_ranges", chart("Null distribution of the λ range", "range", "share", false, false, series))?;
        figures += 1;
    }
    if let Some(p) = find("comparison.csv") {
        let t = Table::read(&p)?;
        let l = t.column("lambda_mean")?;
        let sp = t.column("spread_mean")?;
        let idx: Vec<f64> = (1..=l.len()).map(|i| i as f64).collect();
        emit(out, "fig4a_lambda", chart("Ensemble λ by bucket", "bucket", "λ", false, false, vec![Series::new("lambda", pairs(&idx, &l), Style::Line)]))?;
        emit(out, "fig4b_spread", chart("Investment-grade spread by bucket", "bucket", "spread (pp)", false, false, vec![Series::new("spread", pairs(&idx, &sp), Style::Line)]))?;
        figures += 1;
    }
    if figures == 0 {
        return Err(Failure::Validation("no known artifacts in the input directories".into()));
    }
    Ok(())
}
