use mrwlab::mctest::{build_null_distribution, segment_ranges, NullSettings};
use mrwlab::mle::FitOptions;
use mrwlab::mrw::simulate_mrw_member;
use mrwlab::MrwParams;

const DT: f64 = 120.0;

/// Ranges of independent null paths follow the null distribution:
/// two-sample Kolmogorov–Smirnov over 200 replications at the 5% level.
#[test]
fn null_ranges_match_independent_paths() {
    let n = 1200;
    let params = MrwParams::new(0.5, 1.0, n as f64 * DT, DT).unwrap();
    let settings = NullSettings {
        params,
        n,
        segment_count: 3,
        ensemble_size: 100,
        seed: 1,
    };
    let opts = FitOptions::default();
    let dist = build_null_distribution(&settings, &opts).unwrap();
    assert_eq!(dist.ensemble_size + dist.failed, 100);

    let checks = 200;
    let mut fresh: Vec<f64> = (0..checks)
        .map(|m| {
            let x = simulate_mrw_member(&params, n, 2, m, false).unwrap().returns;
            segment_ranges(&x, DT, 3, &opts).unwrap()
        })
        .collect();
    fresh.sort_by(f64::total_cmp);
    let ecdf = |sorted: &[f64], v: f64| sorted.partition_point(|&r| r <= v) as f64 / sorted.len() as f64;
    let d = dist
        .ranges
        .iter()
        .chain(&fresh)
        .map(|&v| (ecdf(&dist.ranges, v) - ecdf(&fresh, v)).abs())
        .fold(0.0, f64::max);
    let (a, b) = (dist.ranges.len() as f64, checks as f64);
    assert!(d < 1.36 * ((a + b) / (a * b)).sqrt(), "KS statistic {d}");
}
