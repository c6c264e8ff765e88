//! Subcommand bodies.

use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use mrwlab::ingest::{
    constant_price_segments, filter_late_days, load_quotes, log_returns, mid_quote_series, read_sampled_csv,
    sample_regular, SegmentStats, Session,
};
use mrwlab::mctest::{build_null_distribution, significance_test, test_range, NullSettings};
use mrwlab::mle::{fit_mrw, fit_windows, EstimateSeries, FitOptions, TPolicy, WindowRule};
use mrwlab::mrw::{simulate_mrw, LAMBDA_MAX};
use mrwlab::scaling::{
    acf, default_q_grid, difference_structure_functions, fit_lambda_to_zeta, fit_scaling_function, psd,
    wavelet_structure_functions, AcfTransform,
};
use mrwlab::season::{deseasonalize, deseasonalize_mean, fit_profile, MeanPass, ProfileOptions, Statistic};
use mrwlab::spread::{
    aggregate_estimates, aggregate_spread, compare, ensemble_average, investment_grade_spread, Aggregation,
    YieldSeries,
};
use mrwlab::util::log_spaced;
use mrwlab::{MrwParams, SampledSeries, SeriesKind};

use crate::config::{NumberList, Settings};
use crate::outputs::Outputs;
use crate::{Command, Common, Failure, Grid, SEED_ENV};

type Outcome = Result<(), Failure>;

pub fn dispatch(command: Command) -> Outcome {
    match command {
        Command::Ingest {
            common,
            grid,
            quotes,
            max_open_delay,
        } => execute("ingest", &common, |s, o| ingest(s, o, &grid, quotes, max_open_delay)),
        Command::Deseason {
            common,
            grid,
            input,
            smoothing,
            mean_pass,
        } => execute("deseason", &common, |s, o| deseason(s, o, &grid, input, smoothing, mean_pass)),
        Command::Scaling {
            common,
            grid,
            input,
            q_grid,
            scale_min,
            scale_max,
            fit_min,
            fit_max,
            max_lag,
            psd_fit_max,
        } => execute("scaling", &common, |s, o| {
            let flags = ScalingFlags {
                q_grid,
                scale_min,
                scale_max,
                fit_min,
                fit_max,
                max_lag,
                psd_fit_max,
            };
            scaling(s, o, &grid, input, flags)
        }),
        Command::Simulate {
            common,
            grid,
            lambda,
            sigma,
            t_seconds,
            n,
            seed,
            per_day,
            start,
        } => execute("simulate", &common, |s, o| {
            simulate(s, o, &grid, lambda, sigma, t_seconds, n, seed, per_day, start)
        }),
        Command::Fit {
            common,
            grid,
            input,
            windows,
            t_policy,
            restarts,
        } => execute("fit", &common, |s, o| fit(s, o, &grid, input, windows, t_policy, restarts)),
        Command::McTest {
            common,
            ensemble,
            lambda,
            sigma,
            t_seconds,
            step,
            n,
            segments,
            seed,
            observed,
            observed_range,
        } => execute("mc-test", &common, |s, o| {
            let flags = McFlags {
                ensemble,
                lambda,
                sigma,
                t_seconds,
                step,
                n,
                segments,
                seed,
                observed,
                observed_range,
            };
            mc_test(s, o, flags)
        }),
        Command::Spread {
            common,
            aaa,
            treasury,
            estimates,
            aggregate,
        } => execute("spread", &common, |s, o| spread(s, o, aaa, treasury, estimates, aggregate)),
        Command::Report { common, inputs } => execute("report", &common, |s, o| crate::report::report(s, o, inputs)),
    }
}

/// Resolves the output directory, runs `body`, writes the manifest, and
/// removes everything written if any step fails.
fn execute(name: &str, common: &Common, body: impl FnOnce(&mut Settings, &mut Outputs) -> Outcome) -> Outcome {
    let mut settings = Settings::load(common.config.as_deref())?;
    let dir = settings.unrecorded("out", common.out.as_ref().map(|p| p.display().to_string()))?;
    let dir = PathBuf::from(dir.unwrap_or_else(|| format!("mrwlab-{name}")));
    let mut outputs = Outputs::create(&dir)?;
    let result = body(&mut settings, &mut outputs)
        .and_then(|_| settings.finish())
        .and_then(|_| outputs.write_manifest(name, &settings));
    match result {
        Ok(()) => {
            log::info!("{name}: wrote {} artifacts to {}", outputs.names().len(), dir.display());
            Ok(())
        }
        Err(e) => {
            outputs.discard();
            Err(e)
        }
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

struct GridSpec {
    step: u32,
    session: Session,
}

impl GridSpec {
    /// Returns per full session.
    fn returns_per_day(&self) -> usize {
        (self.session.seconds() / self.step) as usize
    }
}

fn grid(s: &mut Settings, g: &Grid) -> Result<GridSpec, Failure> {
    let step = s.get("step", g.step, 120u32)?;
    if step == 0 {
        return Err(invalid("step must be at least one second"));
    }
    let open = s.get("session-open", g.session_open.clone(), "09:00".to_string())?;
    let close = s.get("session-close", g.session_close.clone(), "16:36".to_string())?;
    let session = Session::new(Session::parse_time(&open)?, Session::parse_time(&close)?)?;
    Ok(GridSpec { step, session })
}

fn read_returns(path: &Path, g: &GridSpec) -> Result<SampledSeries, Failure> {
    Ok(read_sampled_csv(
        path,
        SeriesKind::LogReturn,
        g.step as f64,
        g.session.open,
        Some(g.returns_per_day()),
    )?)
}

/// Flag, then config, then the environment, then 0.
fn seed(s: &mut Settings, flag: Option<u64>) -> Result<u64, Failure> {
    if let Some(v) = s.optional("seed", flag)? {
        return Ok(v);
    }
    let v = match std::env::var(SEED_ENV) {
        Ok(raw) => raw
            .trim()
            .parse::<u64>()
            .map_err(|e| invalid(format!("{SEED_ENV}={raw:?}: {e}")))?,
        Err(_) => 0,
    };
    s.record("seed", v);
    Ok(v)
}

fn write_kv(out: &mut Outputs, name: &str, pairs: &[(&str, String)]) -> Outcome {
    let text: String = pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    out.write_text(name, &text)
}

fn ingest(s: &mut Settings, out: &mut Outputs, g: &Grid, quotes: Option<PathBuf>, delay: Option<i64>) -> Outcome {
    let quotes = s.input("quotes", quotes)?;
    let g = grid(s, g)?;
    let delay = s.get("max-open-delay", delay, 900i64)?;
    if delay < 0 {
        return Err(invalid("max-open-delay must be non-negative"));
    }
    let (days, summary) = load_quotes(&quotes, g.session)?;
    let loaded = days.len();
    let days = filter_late_days(days, Duration::seconds(delay));
    if days.is_empty() {
        return Err(invalid("no trading day left after the late-start filter"));
    }
    let seconds = days.iter().map(mid_quote_series).collect::<mrwlab::Result<Vec<_>>>()?;
    let stats = seconds
        .iter()
        .map(|d| constant_price_segments(&d.prices))
        .reduce(SegmentStats::merge)
        .expect("at least one day");
    let prices = sample_regular(&seconds, g.step)?;
    let returns = log_returns(&prices)?;
    prices.write_csv(&out.path("log_prices.csv"))?;
    returns.write_csv(&out.path("returns.csv"))?;

    let longest = stats.segment_lengths.iter().copied().max().unwrap_or(0);
    let mut survival = String::from("tau_seconds,segments\n");
    for tau in 1..=longest.clamp(1, 3600) {
        survival.push_str(&format!("{tau},{}\n", stats.survival(tau)));
    }
    out.write_text("segment_survival.csv", &survival)?;
    write_kv(
        out,
        "ingest_summary.txt",
        &[
            ("rows", summary.rows.to_string()),
            ("outside_session", summary.outside_session.to_string()),
            ("days_loaded", loaded.to_string()),
            ("days_late", (loaded - days.len()).to_string()),
            ("days_kept", days.len().to_string()),
            ("segments", stats.total_segments.to_string()),
            ("segments_at_least_step", stats.survival(g.step as u64 - 1).to_string()),
            ("samples", prices.len().to_string()),
            ("returns", returns.len().to_string()),
        ],
    )
}

fn deseason(
    s: &mut Settings,
    out: &mut Outputs,
    g: &Grid,
    input: Option<PathBuf>,
    smoothing: Option<usize>,
    mean_pass: Option<String>,
) -> Outcome {
    let input = s.input("input", input)?;
    let g = grid(s, g)?;
    let opts = ProfileOptions {
        smoothing_width: s.get("smoothing", smoothing, 0usize)?,
    };
    let pass = s.get("mean-pass", mean_pass, "subtract".to_string())?;
    let y = read_returns(&input, &g)?;
    let profile = fit_profile(&y, Statistic::MeanAbsolute, &opts)?;
    let x = deseasonalize(&y, &profile)?;
    let x = match pass.as_str() {
        "subtract" => deseasonalize_mean(&x, MeanPass::Subtract, &opts)?,
        "divide" => deseasonalize_mean(&x, MeanPass::Divide, &opts)?,
        "none" => x,
        other => return Err(invalid(format!("mean-pass must be subtract, divide or none, got {other:?}"))),
    };
    let refit = fit_profile(&x, Statistic::MeanAbsolute, &ProfileOptions::default())?;
    profile.write_csv(&out.path("profile.csv"))?;
    x.write_csv(&out.path("deseasonalized.csv"))?;
    write_kv(
        out,
        "deseason_summary.txt",
        &[
            ("days", y.day_count().to_string()),
            ("buckets", profile.bucket_count().to_string()),
            ("profile_max_min_ratio", profile.max_min_ratio().to_string()),
            ("refit_max_min_ratio", refit.max_min_ratio().to_string()),
        ],
    )
}

struct ScalingFlags {
    q_grid: Option<NumberList>,
    scale_min: Option<f64>,
    scale_max: Option<f64>,
    fit_min: Option<f64>,
    fit_max: Option<f64>,
    max_lag: Option<usize>,
    psd_fit_max: Option<f64>,
}

fn scaling(s: &mut Settings, out: &mut Outputs, g: &Grid, input: Option<PathBuf>, f: ScalingFlags) -> Outcome {
    let input = s.input("input", input)?;
    let g = grid(s, g)?;
    let x = read_returns(&input, &g)?;
    let price = mrwlab::ingest::cumulate(&x)?.values;
    let n = price.len();
    let q = s.get("q-grid", f.q_grid, NumberList(default_q_grid()))?.0;
    let scale_min = s.get("scale-min", f.scale_min, 4.0)?;
    let scale_max = s.get("scale-max", f.scale_max, n as f64 / 20.0)?;
    if !(scale_min > 0.0 && scale_max >= scale_min) {
        return Err(invalid(format!("scale range [{scale_min}, {scale_max}] is empty")));
    }
    let fit_min = s.get("fit-min", f.fit_min, scale_min)?;
    let fit_max = s.get("fit-max", f.fit_max, scale_max)?;
    let max_lag = s.get("max-lag", f.max_lag, 200.min(x.len().saturating_sub(1) / 2))?;
    let psd_fit_max = s.get("psd-fit-max", f.psd_fit_max, 0.1)?;
    let dt = g.step as f64;

    let r = acf(&x.values, max_lag, AcfTransform::Identity)?;
    let r_abs = acf(&x.values, max_lag, AcfTransform::Absolute)?;
    r.write_csv(&out.path("acf.csv"))?;
    r_abs.write_csv(&out.path("acf_abs.csv"))?;

    let spectrum = psd(&price, dt)?;
    let slope = spectrum.log_log_slope(0.0, psd_fit_max / dt)?;
    spectrum.write_csv(&out.path("psd.csv"))?;

    let scales = log_spaced(scale_min, scale_max, mrwlab::scaling::SCALES_PER_DECADE);
    let wavelet = wavelet_structure_functions(&price, &q, &scales)?.with_fit_range(fit_min, fit_max);
    let zeta_w = fit_scaling_function(&wavelet)?;
    let diff = difference_structure_functions(&price, &q, &scales)?.with_fit_range(fit_min, fit_max);
    let zeta_d = fit_scaling_function(&diff)?;
    wavelet.write_csv(&out.path("structure_wavelet.csv"))?;
    zeta_w.write_csv(&out.path("zeta_wavelet.csv"))?;
    diff.write_csv(&out.path("structure_difference.csv"))?;
    zeta_d.write_csv(&out.path("zeta_difference.csv"))?;

    let mut summary = vec![
        ("n", x.len().to_string()),
        ("acf_band", r.band.to_string()),
        ("acf_inside_band", r.fraction_inside_band().to_string()),
        ("psd_slope", slope.to_string()),
    ];
    for (name, rep) in [("wavelet", &zeta_w), ("difference", &zeta_d)] {
        match fit_lambda_to_zeta(rep) {
            Ok(l) => {
                summary.push((if name == "wavelet" { "lambda_wavelet" } else { "lambda_difference" }, l.lambda.to_string()));
                if l.degenerate {
                    log::warn!("{name} scaling function is convex; λ set to 0");
                }
            }
            Err(e) => log::warn!("no λ from the {name} scaling function: {e}"),
        }
    }
    write_kv(out, "scaling_summary.txt", &summary)
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    s: &mut Settings,
    out: &mut Outputs,
    g: &Grid,
    lambda: Option<f64>,
    sigma: Option<f64>,
    t_seconds: Option<f64>,
    n: Option<usize>,
    seed_flag: Option<u64>,
    per_day: Option<usize>,
    start: Option<String>,
) -> Outcome {
    let g = grid(s, g)?;
    let lambda = s.get("lambda", lambda, 0.5)?;
    let sigma = s.get("sigma", sigma, 1.0)?;
    let n = s.get("n", n, 65_536usize)?;
    if n < 2 {
        return Err(invalid("n must be at least 2"));
    }
    let t = s.get("t-seconds", t_seconds, n as f64 * g.step as f64)?;
    let seed = seed(s, seed_flag)?;
    let per_day = s.get("per-day", per_day, g.returns_per_day())?;
    if per_day == 0 || per_day > g.returns_per_day() {
        return Err(invalid(format!("per-day must lie in [1, {}]", g.returns_per_day())));
    }
    let start = s.get("start", start, "2008-01-02".to_string())?;
    let start = NaiveDate::parse_from_str(&start, "%Y-%m-%d").map_err(|e| invalid(format!("start {start:?}: {e}")))?;

    let params = MrwParams::new(lambda, sigma, t, g.step as f64)?;
    params.validate(LAMBDA_MAX)?;
    let path = simulate_mrw(&params, n, seed)?;
    path.write_csv(&out.path("path.csv"))?;
    let returns = SampledSeries::on_weekdays(
        path.returns.clone(),
        SeriesKind::LogReturn,
        start,
        g.session.open,
        g.step as f64,
        per_day,
    );
    returns.write_csv(&out.path("returns.csv"))?;
    let text = format!("{}seed={seed}\nn={n}\n", params.to_key_value());
    out.write_text("params.txt", &text)
}

fn fit(
    s: &mut Settings,
    out: &mut Outputs,
    g: &Grid,
    input: Option<PathBuf>,
    windows: Option<String>,
    t_policy: Option<String>,
    restarts: Option<usize>,
) -> Outcome {
    let input = s.input("input", input)?;
    let g = grid(s, g)?;
    let windows = s.get("windows", windows, "whole".to_string())?;
    let rule = match windows.as_str() {
        "whole" => None,
        "month" => Some(WindowRule::CalendarMonth),
        "year" => Some(WindowRule::CalendarYear),
        k => match k.parse::<usize>() {
            Ok(k) if k > 0 => Some(WindowRule::FixedCount(k)),
            _ => return Err(invalid(format!("windows must be whole, month, year or a count, got {k:?}"))),
        },
    };
    let policy = s.get("t-policy", t_policy, "window".to_string())?;
    let t_policy = match policy.as_str() {
        "window" => TPolicy::WindowLength,
        "estimate" => TPolicy::Estimate,
        v => match v.parse::<f64>() {
            Ok(t) if t > 0.0 => TPolicy::Fixed(t),
            _ => return Err(invalid(format!("t-policy must be window, estimate or seconds, got {v:?}"))),
        },
    };
    let opts = FitOptions {
        t_policy,
        restarts: s.get("restarts", restarts, 3usize)?,
        ..FitOptions::default()
    };
    let x = read_returns(&input, &g)?;
    let estimates = match rule {
        None => EstimateSeries {
            rule: WindowRule::FixedCount(1),
            results: vec![fit_mrw(&x, &opts)?],
        },
        Some(rule) => fit_windows(&x, rule, &opts)?,
    };
    estimates.write_csv(&out.path("estimates.csv"))?;
    let mut text = String::new();
    let mut converged = 0;
    for r in &estimates.results {
        let label = r.window.as_ref().map_or("", |w| w.start_label.as_str());
        if r.converged {
            converged += 1;
            text.push_str(&format!("{label}: {}\n", r.summary()));
        } else {
            let why = r.error.as_deref().unwrap_or("not converged");
            log::warn!("window starting {label} failed: {why}");
            text.push_str(&format!("{label}: failed ({why})\n"));
        }
    }
    text.push_str(&format!("converged={converged}/{}\n", estimates.results.len()));
    out.write_text("fit_summary.txt", &text)
}

struct McFlags {
    ensemble: Option<usize>,
    lambda: Option<f64>,
    sigma: Option<f64>,
    t_seconds: Option<f64>,
    step: Option<u32>,
    n: Option<usize>,
    segments: Option<usize>,
    seed: Option<u64>,
    observed: Option<PathBuf>,
    observed_range: Option<f64>,
}

fn mc_test(s: &mut Settings, out: &mut Outputs, f: McFlags) -> Outcome {
    let ensemble = s.get("ensemble", f.ensemble, 500usize)?;
    let lambda = s.get("lambda", f.lambda, 0.5)?;
    let sigma = s.get("sigma", f.sigma, 1.0)?;
    let step = s.get("step", f.step, 120u32)?;
    let n = s.get("n", f.n, 56_544usize)?;
    let segments = s.get("segments", f.segments, 12usize)?;
    let t = s.get("t-seconds", f.t_seconds, n as f64 * step as f64)?;
    let seed = seed(s, f.seed)?;
    let observed = s.optional_input("observed", f.observed)?;
    let observed_range = s.optional("observed-range", f.observed_range)?;
    if observed.is_some() && observed_range.is_some() {
        return Err(invalid("give either observed or observed-range, not both"));
    }
    if segments == 0 || n < segments {
        return Err(invalid(format!("cannot split {n} steps into {segments} segments")));
    }
    let params = MrwParams::new(lambda, sigma, t, step as f64)?;
    let settings = NullSettings {
        params,
        n,
        segment_count: segments,
        ensemble_size: ensemble,
        seed,
    };
    let observed = observed
        .map(|p| EstimateSeries::read_csv(&p, WindowRule::FixedCount(segments)))
        .transpose()?;
    let dist = build_null_distribution(&settings, &FitOptions::default())?;
    dist.write_csv(&out.path("null_ranges.csv"))?;
    let mut text = params.to_key_value();
    text.push_str(&format!(
        "n={n}\nsegments={segments}\nseed={seed}\nrequested={}\nfailed={}\n",
        dist.requested, dist.failed
    ));
    let report = match (&observed, observed_range) {
        (Some(est), _) => Some(significance_test(est, &dist)?),
        (None, Some(r)) => Some(test_range(r, &dist)),
        (None, None) => None,
    };
    match report {
        Some(r) => text.push_str(&r.to_key_value()),
        None => text.push_str(&format!(
            "q025={}\nq975={}\nensemble_size={}\n",
            dist.quantile(0.025),
            dist.quantile(0.975),
            dist.ensemble_size
        )),
    }
    out.write_text("mc_report.txt", &text)
}

fn spread(
    s: &mut Settings,
    out: &mut Outputs,
    aaa: Option<PathBuf>,
    treasury: Option<PathBuf>,
    estimates: Option<crate::config::PathList>,
    aggregate: Option<String>,
) -> Outcome {
    let aaa_path = s.input("aaa", aaa)?;
    let treasury_path = s.input("treasury", treasury)?;
    let estimates = s.optional("estimates", estimates)?;
    let rule = match s.get("aggregate", aggregate, "annual".to_string())?.as_str() {
        "monthly" => Aggregation::Monthly,
        "annual" => Aggregation::Annual,
        other => return Err(invalid(format!("aggregate must be monthly or annual, got {other:?}"))),
    };
    if let Some(list) = &estimates {
        if let Some(p) = list.0.iter().find(|p| !p.is_file()) {
            return Err(invalid(format!("estimates: no such file {}", p.display())));
        }
    }
    let spread = investment_grade_spread(&YieldSeries::read_csv(&aaa_path)?, &YieldSeries::read_csv(&treasury_path)?)?;
    spread.write_csv(&out.path("spread.csv"))?;
    let spread_agg = aggregate_spread(&spread, rule);
    spread_agg.write_csv(&out.path("spread_aggregated.csv"), "spread_mean")?;
    let Some(list) = estimates else {
        return Ok(());
    };
    let per_stock = list
        .0
        .iter()
        .map(|p| {
            let est = EstimateSeries::read_csv(p, WindowRule::CalendarYear)?;
            aggregate_estimates(&est, rule)
        })
        .collect::<mrwlab::Result<Vec<_>>>()?;
    let ensemble = ensemble_average(&per_stock);
    ensemble.write_csv(&out.path("lambda_aggregated.csv"))?;
    let cmp = compare(&ensemble.as_buckets(rule), &spread_agg)?;
    cmp.write_csv(&out.path("comparison.csv"))?;
    let mut text = cmp.to_key_value();
    text.push_str(&format!("aaa_source={}\ntreasury_source={}\n", aaa_path.display(), treasury_path.display()));
    out.write_text("comparison.txt", &text)
}
