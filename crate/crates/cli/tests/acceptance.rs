//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so the verdict lines always reach the
//! output. `MRWLAB_ACCEPTANCE=1,4` restricts the run to the listed criteria;
//! unselected criteria are reported as skipped. Criterion 5 simulates a
//! 200-path null ensemble and takes hours on a single core.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use chrono::{NaiveDate, NaiveTime};
use rand::Rng;
use rayon::prelude::*;

use mrwlab::ingest::{cumulate, SampledSeries, SeriesKind};
use mrwlab::mctest::{build_null_distribution, test_range, NullSettings};
use mrwlab::mle::{approx_log_likelihood, fit_returns, posterior_mode, quadrature_likelihood_oracle, FitOptions};
use mrwlab::mrw::{simulate_log_volatility_member, simulate_mrw_member, theoretical_zeta, SimulationMethod};
use mrwlab::rng::{standard_normals, stream};
use mrwlab::scaling::{
    acf, default_q_grid, default_scales, fit_lambda_to_zeta, fit_scaling_function, psd, wavelet_structure_functions,
    AcfTransform, ScalingReport,
};
use mrwlab::season::{deseasonalize, deseasonalize_mean, fit_profile, MeanPass, ProfileOptions, Statistic};
use mrwlab::util::{mean, sample_sd};
use mrwlab::MrwParams;

const DT: f64 = 120.0;

type Outcome = Result<String, String>;

/// `ζ(q) = (1 + λ²/2)·q/2 − λ²·q²/8`, written out independently of the library.
fn zeta_oracle(lambda: f64, q: f64) -> f64 {
    q / 2.0 + lambda * lambda * (q / 4.0 - q * q / 8.0)
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn exact_identities() -> Outcome {
    let mut rng = stream(1, 0);
    let mut worst_zeta: f64 = 0.0;
    for _ in 0..100 {
        let lambda: f64 = rng.random_range(0.0..1.0);
        worst_zeta = worst_zeta.max((theoretical_zeta(lambda, 2.0) - 1.0).abs());
    }
    let mut worst_ll: f64 = 0.0;
    for (k, &n) in [1usize, 2, 3, 17, 500, 4712].iter().enumerate() {
        let sigma: f64 = rng.random_range(0.2..3.0);
        let x: Vec<f64> = standard_normals(&mut stream(1, 1 + k as u64), n).iter().map(|z| sigma * z).collect();
        let params = MrwParams::new(0.0, sigma, n as f64 * DT, DT).map_err(|e| e.to_string())?;
        let laplace = approx_log_likelihood(&x, &params).map_err(|e| e.to_string())?;
        let closed = -0.5 * n as f64 * (2.0 * PI * sigma * sigma).ln()
            - x.iter().map(|v| v * v).sum::<f64>() / (2.0 * sigma * sigma);
        worst_ll = worst_ll.max((laplace - closed).abs());
    }
    check(
        worst_zeta <= 1e-12 && worst_ll <= 1e-8,
        format!("max |ζ(2)−1| = {worst_zeta:.1e}, max |ℓ(λ=0) − iid Gaussian| = {worst_ll:.1e} (tol 1e-8)"),
    )
}

/// Joint log-density of `(x, h)` for two observations, by hand.
fn joint_two(x: [f64; 2], h: [f64; 2], params: &MrwParams) -> f64 {
    let l2 = params.lambda * params.lambda;
    let a = l2 * (params.t_ratio()).ln().max(0.0);
    let b = l2 * (params.t_ratio() / 2.0).ln().max(0.0);
    let det = a * a - b * b;
    let quad = (a * h[0] * h[0] - 2.0 * b * h[0] * h[1] + a * h[1] * h[1]) / det;
    let c = (-0.5 * a).exp();
    let s2c = params.sigma * params.sigma * c;
    let mut ll = -0.5 * quad - 0.5 * det.ln() - (2.0 * PI).ln();
    for i in 0..2 {
        ll += -0.5 * (2.0 * PI * s2c).ln() - 0.5 * h[i] - x[i] * x[i] * (-h[i]).exp() / (2.0 * s2c);
    }
    ll
}

fn grid_argmax(x: [f64; 2], params: &MrwParams) -> [f64; 2] {
    let mut centre = [0.0, 0.0];
    let mut half = 6.0;
    while half > 1e-6 {
        let steps = 40;
        let mut best = (f64::NEG_INFINITY, centre);
        for i in 0..=steps {
            for j in 0..=steps {
                let h = [
                    centre[0] - half + 2.0 * half * i as f64 / steps as f64,
                    centre[1] - half + 2.0 * half * j as f64 / steps as f64,
                ];
                let v = joint_two(x, h, params);
                if v > best.0 {
                    best = (v, h);
                }
            }
        }
        centre = best.1;
        half *= 0.25;
    }
    centre
}

fn oracle_agreement() -> Outcome {
    let mut rng = stream(2, 0);
    let mut worst_rel: f64 = 0.0;
    let mut worst_case = String::new();
    for i in 0..100u64 {
        let n = 1 + (i % 3) as usize;
        let lambda: f64 = rng.random_range(0.0..=0.7);
        let sigma: f64 = rng.random_range(0.5..2.0);
        let t_ratio = (n as f64).max(1.0) * (rng.random_range(0.0..(4712.0f64 / n as f64).ln())).exp();
        let params = MrwParams::new(lambda, sigma, t_ratio * DT, DT).map_err(|e| e.to_string())?;
        let x = simulate_mrw_member(&params, n, 2, i, false).map_err(|e| e.to_string())?.returns;
        let laplace = approx_log_likelihood(&x, &params).map_err(|e| e.to_string())?;
        let quad = quadrature_likelihood_oracle(&x, &params, 60).map_err(|e| e.to_string())?;
        let rel = ((laplace - quad).exp() - 1.0).abs();
        if rel > worst_rel {
            worst_rel = rel;
            worst_case = format!("n={n}, λ={lambda:.3}, T/Δt={t_ratio:.1}");
        }
    }
    // Same draws with T at the window length, the estimator's default.
    let mut rng = stream(2, 0);
    let mut worst_window: f64 = 0.0;
    for i in 0..100u64 {
        let n = 1 + (i % 3) as usize;
        let lambda: f64 = rng.random_range(0.0..=0.7);
        let sigma: f64 = rng.random_range(0.5..2.0);
        let _: f64 = rng.random_range(0.0..1.0);
        let params = MrwParams::new(lambda, sigma, n as f64 * DT, DT).map_err(|e| e.to_string())?;
        let x = simulate_mrw_member(&params, n, 2, i, false).map_err(|e| e.to_string())?.returns;
        let laplace = approx_log_likelihood(&x, &params).map_err(|e| e.to_string())?;
        let quad = quadrature_likelihood_oracle(&x, &params, 60).map_err(|e| e.to_string())?;
        worst_window = worst_window.max(((laplace - quad).exp() - 1.0).abs());
    }
    let mut worst_mode: f64 = 0.0;
    for (k, x) in [[0.3, -1.2], [2.5, 0.05], [-0.7, 0.9]].into_iter().enumerate() {
        let params = MrwParams::new(0.3 + 0.15 * k as f64, 1.0, 50.0 * DT, DT).map_err(|e| e.to_string())?;
        let mode = posterior_mode(&x, &params).map_err(|e| e.to_string())?;
        let grid = grid_argmax(x, &params);
        for i in 0..2 {
            worst_mode = worst_mode.max((mode.h[i] - grid[i]).abs());
        }
    }
    check(
        worst_rel <= 0.02 && worst_mode <= 1e-3,
        format!(
            "T/Δt log-uniform in [n, 4712]: max relative likelihood gap {worst_rel:.4} at {worst_case} (tol 0.02); \
             T = nΔt: {worst_window:.4}; max |ĥ − grid| = {worst_mode:.1e} (tol 1e-3)"
        ),
    )
}

fn simulation_fidelity() -> Outcome {
    let n = 1024;
    let paths = 1000u64;
    let params = MrwParams::new(0.5, 1.0, n as f64 * DT, DT).map_err(|e| e.to_string())?;
    let lags = [0usize, 1, 10, 100];
    let per_path: Vec<Vec<f64>> = (0..paths)
        .into_par_iter()
        .map(|m| {
            let h = simulate_log_volatility_member(&params, n, 3, m, SimulationMethod::Auto).expect("simulation");
            lags.iter()
                .map(|&l| (0..n - l).map(|t| h[t] * h[t + l]).sum::<f64>() / (n - l) as f64)
                .collect()
        })
        .collect();
    let mut notes = Vec::new();
    let mut ok = true;
    for (k, &lag) in lags.iter().enumerate() {
        let est: Vec<f64> = per_path.iter().map(|v| v[k]).collect();
        let se = sample_sd(&est) / (paths as f64).sqrt();
        let truth = 0.25 * (n as f64 / (lag as f64 + 1.0)).ln().max(0.0);
        let z = (mean(&est) - truth) / se;
        ok &= z.abs() <= 3.0;
        notes.push(format!("lag {lag}: z={z:.2}"));
    }

    let big = 1 << 16;
    let params = MrwParams::new(0.5, 1.0, big as f64 * DT, DT).map_err(|e| e.to_string())?;
    let q: Vec<f64> = (1..=6).map(|k| 0.5 * k as f64).collect();
    let zeta_hat = |member: u64| -> Result<Vec<f64>, String> {
        let x = simulate_mrw_member(&params, big, 3, member, false).map_err(|e| e.to_string())?.returns;
        let price = cumulate(&SampledSeries::from_values(x, DT, SeriesKind::LogReturn))
            .map_err(|e| e.to_string())?
            .values;
        let sf = wavelet_structure_functions(&price, &q, &default_scales(big)).map_err(|e| e.to_string())?;
        Ok(fit_scaling_function(&sf).map_err(|e| e.to_string())?.zeta_hat)
    };
    let single = zeta_hat(0)?;
    let worst = q
        .iter()
        .zip(&single)
        .map(|(&qq, z)| (z - zeta_oracle(0.5, qq)).abs())
        .fold(0.0, f64::max);
    ok &= worst <= 0.05;

    // Spread of the same estimator over further paths, for context only.
    let others: Vec<Vec<f64>> = (1..=20u64).into_par_iter().map(zeta_hat).collect::<Result<_, _>>()?;
    let last = q.len() - 1;
    let at_top: Vec<f64> = others.iter().map(|z| z[last]).collect();
    let bias = (0..q.len())
        .map(|i| (mean(&others.iter().map(|z| z[i]).collect::<Vec<_>>()) - zeta_oracle(0.5, q[i])).abs())
        .fold(0.0, f64::max);
    check(
        ok,
        format!(
            "h covariance {}; one path: max |ζ̂(q) − ζ(q)| = {worst:.4} (tol 0.05); \
             20 further paths: max |mean ζ̂ − ζ| = {bias:.4}, sd ζ̂(3) = {:.4}",
            notes.join(", "),
            sample_sd(&at_top)
        ),
    )
}

fn estimator_recovery() -> Outcome {
    let n = 4712;
    let opts = FitOptions::default();
    let fit_all = |lambda: f64, seed: u64| -> Result<Vec<f64>, String> {
        let params = MrwParams::new(lambda, 1.0, n as f64 * DT, DT).map_err(|e| e.to_string())?;
        (0..100u64)
            .into_par_iter()
            .map(|m| {
                let x = simulate_mrw_member(&params, n, seed, m, false)
                    .map_err(|e| e.to_string())?
                    .returns;
                fit_returns(&x, DT, &opts).map(|f| f.params.lambda).map_err(|e| format!("member {m}: {e}"))
            })
            .collect()
    };
    let multifractal = fit_all(0.5, 4)?;
    let m = mean(&multifractal);
    let sd = sample_sd(&multifractal);
    let null = fit_all(0.0, 40)?;
    let below = null.iter().filter(|&&l| l < 0.1).count();
    check(
        (0.47..=0.53).contains(&m) && sd < 0.05 && below >= 95,
        format!("λ=0.5: mean λ̂ = {m:.4}, sd = {sd:.4}; λ=0: {below}/100 below 0.1"),
    )
}

fn null_ensemble() -> Outcome {
    let n = 56_544;
    let settings = NullSettings {
        params: MrwParams::new(0.5, 1.0, n as f64 * DT, DT).map_err(|e| e.to_string())?,
        n,
        segment_count: 12,
        ensemble_size: 200,
        seed: 5,
    };
    let dist = build_null_distribution(&settings, &FitOptions::default()).map_err(|e| e.to_string())?;
    let q025 = dist.quantile(0.025);
    let q975 = dist.quantile(0.975);
    let report = test_range(0.19, &dist);
    check(
        (q025 - 0.04).abs() <= 0.01 && (q975 - 0.12).abs() <= 0.01 && report.p_value < 0.025 && dist.ensemble_size >= 200,
        format!(
            "{} paths ({} failed): q025 = {q025:.4}, q975 = {q975:.4}, p(0.19) = {}",
            dist.ensemble_size,
            dist.failed,
            report.p_value_text()
        ),
    )
}

fn deseasonalization() -> Outcome {
    let per_day = 228;
    let days = 250;
    let smile = |b: usize| {
        let u = b as f64 / (per_day - 1) as f64 - 0.5;
        1.0 + 6.0 * u * u
    };
    let z = standard_normals(&mut stream(6, 0), per_day * days);
    let y: Vec<f64> = z.iter().enumerate().map(|(i, e)| 1e-3 * smile(i % per_day) * e).collect();
    let series = SampledSeries::on_weekdays(
        y,
        SeriesKind::LogReturn,
        NaiveDate::from_ymd_opt(2008, 1, 2).unwrap(),
        NaiveTime::from_hms_opt(9, 0, 0).unwrap(),
        DT,
        per_day,
    );
    let opts = ProfileOptions::default();
    let e = |e: mrwlab::Error| e.to_string();
    let profile = fit_profile(&series, Statistic::MeanAbsolute, &opts).map_err(e)?;
    let injected = profile.max_min_ratio();
    let x = deseasonalize_mean(&deseasonalize(&series, &profile).map_err(e)?, MeanPass::Subtract, &opts).map_err(e)?;
    let ratio = fit_profile(&x, Statistic::MeanAbsolute, &opts).map_err(e)?.max_min_ratio();
    let inside = acf(&x.values, 200, AcfTransform::Identity).map_err(e)?.fraction_inside_band();
    check(
        ratio < 1.1 && inside >= 0.93,
        format!("profile max/min {injected:.2} before, {ratio:.4} after (tol 1.1); ACF inside band at {:.1}% of 200 lags", 100.0 * inside),
    )
}

fn spectrum() -> Outcome {
    let n = 1 << 16;
    let params = MrwParams::new(0.5, 1.0, n as f64 * DT, DT).map_err(|e| e.to_string())?;
    let x = simulate_mrw_member(&params, n, 7, 0, false).map_err(|e| e.to_string())?.returns;
    let price = cumulate(&SampledSeries::from_values(x, DT, SeriesKind::LogReturn))
        .map_err(|e| e.to_string())?
        .values;
    let slope = psd(&price, DT)
        .and_then(|s| s.log_log_slope(0.0, 0.1 / DT))
        .map_err(|e| e.to_string())?;
    check((slope + 2.0).abs() <= 0.15, format!("log-log PSD slope {slope:.4} (target −2 ± 0.15)"))
}

fn zeta_round_trip() -> Outcome {
    let q = default_q_grid();
    let report = ScalingReport {
        zeta_hat: q.iter().map(|&v| zeta_oracle(0.49, v)).collect(),
        stderr: vec![0.0; q.len()],
        r2: vec![1.0; q.len()],
        q_grid: q,
    };
    let fit = fit_lambda_to_zeta(&report).map_err(|e| e.to_string())?;
    let err = (fit.lambda - 0.49).abs();
    check(err <= 1e-10 && !fit.degenerate, format!("λ̂ = {} (|error| = {err:.1e}, tol 1e-10)", fit.lambda))
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .expect("output directory")
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs: [(&str, &[&str]); 2] = [
        ("simulate", &["--n", "3000", "--seed", "9"]),
        ("mc-test", &["--ensemble", "6", "--n", "1200", "--segments", "3", "--seed", "9"]),
    ];
    let mut notes = Vec::new();
    for (cmd, args) in runs {
        let mut trees = Vec::new();
        for (k, jobs) in ["1", "1", "2", "4"].iter().enumerate() {
            let out = tmp.path().join(format!("{cmd}-{k}"));
            let status = Command::new(env!("CARGO_BIN_EXE_mrwlab"))
                .arg("--jobs")
                .arg(jobs)
                .arg(cmd)
                .args(args)
                .arg("--out")
                .arg(&out)
                .env_remove(mrwlab_cli::SEED_ENV)
                .status()
                .map_err(|e| e.to_string())?;
            if !status.success() {
                return Err(format!("{cmd} --jobs {jobs} exited with {status}"));
            }
            trees.push(read_tree(&out));
        }
        if trees.iter().any(|t| t != &trees[0]) {
            return Err(format!("{cmd}: outputs differ between runs"));
        }
        notes.push(format!("{cmd}: {} files identical over 4 runs (jobs 1,1,2,4)", trees[0].len()));
    }
    Ok(notes.join("; "))
}

fn main() {
    let selected: Option<Vec<usize>> = std::env::var("MRWLAB_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "exact identities", exact_identities),
        (2, "oracle agreement", oracle_agreement),
        (3, "simulation fidelity", simulation_fidelity),
        (4, "estimator recovery", estimator_recovery),
        (5, "null ensemble of segment ranges", null_ensemble),
        (6, "deseasonalization", deseasonalization),
        (7, "spectrum slope", spectrum),
        (8, "zeta fit round trip", zeta_round_trip),
        (9, "determinism", determinism),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(&id)) {
            println!("criterion {id} ({name}): SKIP");
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {id} ({name}): PASS [{secs:.1}s] {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {id} ({name}): FAIL [{secs:.1}s] {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
