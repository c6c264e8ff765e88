use std::path::Path;
use std::process::{Command, Output};

fn mrwlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrwlab"))
        .args(args)
        .env_remove(mrwlab_cli::SEED_ENV)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_kv(p: &Path) -> std::collections::BTreeMap<String, String> {
    mrwlab::mrw::parse_key_value(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn missing_input_is_a_validation_error_and_leaves_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fit");
    let o = mrwlab(&["fit", "--input", path(&tmp.path().join("absent.csv")), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(mrwlab_cli::EXIT_VALIDATION));
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.csv"));
    assert!(!out.exists());
}

#[test]
fn out_of_range_and_conflicting_parameters_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let o = mrwlab(&["simulate", "--lambda", "3", "--n", "100", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    let o = mrwlab(&["mc-test", "--observed-range", "0.1", "--observed", "x.csv", "--ensemble", "2", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = mrwlab(&["--jobs", "0", "simulate", "--n", "100", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn existing_directory_survives_a_failed_run() {
    let tmp = tempfile::tempdir().unwrap();
    let keep = tmp.path().join("keep.txt");
    std::fs::write(&keep, "x").unwrap();
    let o = mrwlab(&["scaling", "--input", path(&keep), "--out", path(tmp.path())]);
    assert_ne!(o.status.code(), Some(0));
    assert!(keep.exists());
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 1);
}

#[test]
fn flags_override_config_and_unknown_keys_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("sim.cfg");
    std::fs::write(&cfg, "# simulation\nlambda=0.3\nn=500\nseed=4\n").unwrap();
    let out = tmp.path().join("sim");
    let o = mrwlab(&["simulate", "--config", path(&cfg), "--n", "600", "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let params = read_kv(&out.join("params.txt"));
    assert_eq!(params["lambda"].parse::<f64>().unwrap(), 0.3);
    assert_eq!(params["n"], "600");
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("param.n=600"));
    assert!(manifest.contains("param.seed=4"));
    assert!(manifest.contains("artifact=path.csv"));

    std::fs::write(&cfg, "lambda=0.3\nlamda=0.2\n").unwrap();
    let bad = tmp.path().join("bad");
    let o = mrwlab(&["simulate", "--config", path(&cfg), "--n", "100", "--out", path(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lamda"));
    assert!(!bad.exists());
}

#[test]
fn seed_falls_back_to_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(mrwlab(&["simulate", "--n", "300", "--seed", "17", "--out", path(&a)]).status.success());
    let o = Command::new(env!("CARGO_BIN_EXE_mrwlab"))
        .args(["simulate", "--n", "300", "--out", path(&b)])
        .env(mrwlab_cli::SEED_ENV, "17")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(std::fs::read(a.join("path.csv")).unwrap(), std::fs::read(b.join("path.csv")).unwrap());
}

#[test]
fn monthly_fit_over_a_simulated_year() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    let grid = ["--step", "600"];
    let mut args = vec!["simulate", "--n", "11250", "--seed", "3", "--lambda", "0.4", "--out", path(&sim)];
    args.extend(grid);
    let o = mrwlab(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let fit = tmp.path().join("fit");
    let returns = sim.join("returns.csv");
    let mut args = vec!["fit", "--input", path(&returns), "--windows", "month", "--restarts", "1", "--out", path(&fit)];
    args.extend(grid);
    let o = mrwlab(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(fit.join("estimates.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 12);
    for (m, row) in rows.iter().enumerate() {
        assert!(row.starts_with(&format!("2008-{:02}-", m + 1)), "{row}");
    }
    let summary = std::fs::read_to_string(fit.join("fit_summary.txt")).unwrap();
    assert!(summary.contains("converged="));

    let report = tmp.path().join("report");
    let inputs = format!("{},{}", path(&sim), path(&fit));
    let o = mrwlab(&["report", "--inputs", &inputs, "--out", path(&report)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(report.join("fig3b_lambda.svg").exists());
    assert!(report.join("fig1b_returns.csv").exists());
}
