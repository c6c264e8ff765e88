use chrono::NaiveDate;

use mrwlab::mle::{EstimateSeries, FitResult, Window, WindowRule};
use mrwlab::spread::{aggregate_estimates, aggregate_spread, compare, investment_grade_spread, Aggregation, YieldSeries};
use mrwlab::MrwParams;

fn weekdays(from: NaiveDate, to: NaiveDate) -> Vec<NaiveDate> {
    from.iter_days()
        .take_while(|d| *d <= to)
        .filter(|d| !matches!(d.format("%a").to_string().as_str(), "Sat" | "Sun"))
        .collect()
}

fn monthly_estimate(year: i32, month: u32, lambda: f64) -> FitResult {
    FitResult {
        params: MrwParams::new(lambda, 1e-3, 4712.0 * 120.0, 120.0).unwrap(),
        log_likelihood: 0.0,
        n: 4712,
        converged: true,
        iterations: 1,
        evaluations: 1,
        window: Some(Window {
            start_index: 0,
            end_index: 4712,
            start_label: format!("{year}-{month:02}-01T09:02:00"),
            end_label: format!("{year}-{month:02}-28T16:36:00"),
        }),
        error: None,
    }
}

/// Spread widening into the crisis while λ falls: strongly negative annual correlation.
#[test]
fn anti_phase_spread_and_lambda() {
    let dates = weekdays(NaiveDate::from_ymd_opt(2005, 1, 3).unwrap(), NaiveDate::from_ymd_opt(2009, 12, 31).unwrap());
    let level = |d: &NaiveDate| match d.format("%Y").to_string().as_str() {
        "2005" => 0.6,
        "2006" => 0.5,
        "2007" => 0.8,
        "2008" => 1.9,
        _ => 1.4,
    };
    let wiggle = |i: usize| 0.05 * (i as f64 * 0.37).sin();
    let treasury = YieldSeries::new(dates.clone(), dates.iter().map(|_| 4.0).collect()).unwrap();
    let aaa = YieldSeries::new(
        dates.clone(),
        dates.iter().enumerate().map(|(i, d)| 4.0 + level(d) + wiggle(i)).collect(),
    )
    .unwrap();
    let spread = aggregate_spread(&investment_grade_spread(&aaa, &treasury).unwrap(), Aggregation::Annual);

    let mut results = Vec::new();
    for (year, base) in [(2005, 0.55), (2006, 0.58), (2007, 0.5), (2008, 0.3), (2009, 0.38)] {
        for month in 1..=12 {
            results.push(monthly_estimate(year, month, base + 0.02 * ((month as f64) * 1.3).cos()));
        }
    }
    let estimates = EstimateSeries {
        rule: WindowRule::CalendarMonth,
        results,
    };
    let lambda = aggregate_estimates(&estimates, Aggregation::Annual).unwrap();
    assert_eq!(lambda.labels, ["2005", "2006", "2007", "2008", "2009"]);
    let c = compare(&lambda, &spread).unwrap();
    assert_eq!(c.bucket_count(), 5);
    assert!(c.pearson < -0.9, "r = {}", c.pearson);
    assert!(c.to_key_value().contains("not assessed"));
}
