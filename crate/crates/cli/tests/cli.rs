use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qrcov(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qrcov")).args(args).output().unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

/// Deterministic linear data with a skewed error pattern.
fn write_data(dir: &Path, name: &str, n: usize, offset: usize) -> PathBuf {
    let mut s = String::from("x1,x2,x3,y\n");
    for i in offset..offset + n {
        let x1 = ((i * 37) % 101) as f64 / 50.0 - 1.0;
        let x2 = ((i * 53) % 97) as f64 / 48.0 - 1.0;
        let x3 = ((i * 71) % 89) as f64 / 44.0 - 1.0;
        let e = ((i * 29) % 83) as f64 / 83.0;
        writeln!(s, "{x1},{x2},{x3},{}", 1.0 + 2.0 * x1 - x2 + e * e * 3.0).unwrap();
    }
    let p = dir.join(name);
    std::fs::write(&p, s).unwrap();
    p
}

#[test]
fn simulate_writes_one_row_per_trial() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let o = qrcov(&["simulate", "--figure", "fig1", "--n", "300", "--d", "90", "--trials", "20", "--seed", "7", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 20);
    let headers = rdr.headers().unwrap().clone();
    let method = headers.iter().position(|h| h == "method").unwrap();
    assert!(rows.iter().all(|r| &r[method] == "qr"));
}

#[test]
fn simulate_output_is_reproducible() {
    let args = ["simulate", "--figure", "fig3", "--n", "60", "--d", "6", "--trials", "3", "--n-test", "50", "--seed", "3"];
    let a = qrcov(&args);
    let mut threaded = vec!["--threads", "3"];
    threaded.extend_from_slice(&args);
    let b = qrcov(&threaded);
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn asymptotics_reports_solution_and_quantiles() {
    let v = json(&qrcov(&["asymptotics", "--gamma", "0.2", "--tau", "0.9", "--sigma", "1"]));
    for key in ["beta0_star", "m_u_star", "rho1_star", "m_eta_star", "predicted_coverage"] {
        assert!(v[key].is_f64(), "{key}");
    }
    let q = v["dual_law"]["quantiles"].as_array().unwrap();
    assert_eq!(q.len(), 3);
    assert!((q[2]["value"].as_f64().unwrap() - 0.3366).abs() < 1e-3);
}

#[test]
fn non_numeric_column_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.csv");
    std::fs::write(&p, "a,y\n1,2\nfoo,3\n").unwrap();
    let o = qrcov(&["fit", "--csv", p.to_str().unwrap(), "--response", "y", "--tau", "0.9", "--lambda", "0"]);
    assert_eq!(o.status.code(), Some(4));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["code"], "data");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(qrcov(&["simulate", "--figure", "fig9"]).status.code(), Some(2));
    assert_eq!(qrcov(&["fit"]).status.code(), Some(2));
    assert_eq!(qrcov(&["fit", "--csv", "missing.csv", "--tau", "1.5"]).status.code(), Some(2));
}

#[test]
fn non_convergence_exits_three() {
    let o = qrcov(&["asymptotics", "--gamma", "0.2", "--lambda", "10000"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn help_lists_defaults() {
    let o = qrcov(&["fit", "--help"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("[default: 0.9]") && text.contains("[default: 0]"));
    let o = qrcov(&["calibrate-additive", "--help"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("[default: -10]") && text.contains("[default: 10]"));
}

#[test]
fn config_file_sets_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# sweep\nfigure = fig1\nn=80\nd=4\ntrials=4\nn-test=30\n").unwrap();
    let c = cfg.to_str().unwrap();
    let v = json(&qrcov(&["simulate", "--config", c]));
    assert_eq!(v["rows"].as_array().unwrap().len(), 4);
    let v = json(&qrcov(&["simulate", "--config", c, "--trials", "2"]));
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn fit_and_calibrate_on_csv() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_data(dir.path(), "train.csv", 120, 0);
    let t = train.to_str().unwrap();
    let v = json(&qrcov(&["fit", "--csv", t, "--tau", "0.8"]));
    assert_eq!(v["beta"].as_array().unwrap().len(), 3);
    assert!(v["kkt"]["stationarity_norm"].as_f64().unwrap() < 1e-6);

    let out = dir.path().join("fit.csv");
    assert!(qrcov(&["fit", "--csv", t, "--out", out.to_str().unwrap()]).status.success());
    assert_eq!(csv::Reader::from_path(&out).unwrap().records().count(), 120);

    let v = json(&qrcov(&["calibrate-level", "--csv", t, "--tau", "0.9"]));
    assert_eq!(v["within_tolerance"], true);
    let v = json(&qrcov(&["calibrate-additive", "--csv", t, "--tau", "0.9", "--lambda-top", "0.05"]));
    assert_eq!(v["within_tolerance"], true);
}

#[test]
fn prediction_commands() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_data(dir.path(), "train.csv", 100, 0);
    let test = write_data(dir.path(), "test.csv", 20, 500);
    let (t, s) = (train.to_str().unwrap(), test.to_str().unwrap());

    let v = json(&qrcov(&["dual-threshold", "--csv", t, "--x", "-0.5,0.2,0.1"]));
    assert_eq!(v["points"].as_array().unwrap().len(), 1);
    assert!(v["points"][0]["cutoff"].is_f64());

    let v = json(&qrcov(&["dual-threshold", "--csv", t, "--test-csv", s, "--random", "5"]));
    assert_eq!(v["points"].as_array().unwrap().len(), 20);
    assert!(v["coverage"].is_f64());

    let v = json(&qrcov(&["conformal", "--csv", t, "--test-csv", s, "--tau", "0.8"]));
    assert_eq!(v["points"].as_array().unwrap().len(), 20);

    let v = json(&qrcov(&["cqr", "--csv", t, "--test-csv", s, "--alpha", "0.2"]));
    let iv = v["intervals"].as_array().unwrap();
    assert!(iv.iter().all(|r| r["lower"].as_f64().unwrap() <= r["upper"].as_f64().unwrap()));

    let v = json(&qrcov(&["evaluate", "--csv", t, "--test-csv", s, "--method", "level-ridge"]));
    assert!((0.0..=1.0).contains(&v["coverage"].as_f64().unwrap()));
    assert_eq!(qrcov(&["evaluate", "--csv", t, "--test-csv", s, "--method", "nope"]).status.code(), Some(2));
    assert_eq!(qrcov(&["dual-threshold", "--csv", t, "--x", "1,2"]).status.code(), Some(4));
}
