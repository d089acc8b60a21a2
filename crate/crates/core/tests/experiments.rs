use std::io::Write;

use qrcov::experiments::*;
use qrcov::metrics::IntervalMethod;
use qrcov::{Dataset, SolverConfig};

fn small(figure: Figure) -> FigureConfig {
    let mut cfg = FigureConfig::defaults(figure);
    cfg.settings.truncate(2);
    for s in &mut cfg.settings {
        s.n = s.n.min(120);
        s.d = s.d.min(12);
    }
    cfg.trials = if figure == Figure::Fig5 { 20 } else { 3 };
    cfg.n_test = cfg.n_test.min(100);
    cfg.c_values = vec![1.0, 5.0];
    cfg.seed = 11;
    cfg
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let cfg = small(Figure::Fig3);
    let solver = SolverConfig::default();
    let one = in_pool(1, || run_figure(&cfg, None, &solver).unwrap());
    let four = in_pool(4, || run_figure(&cfg, None, &solver).unwrap());
    assert_eq!(one.rows, four.rows);
}

#[test]
fn simulated_figures_produce_expected_methods() {
    let solver = SolverConfig::default();
    let expect: [(Figure, &[&str]); 5] = [
        (Figure::Fig1, &["qr"]),
        (Figure::Fig2, &["level"]),
        (Figure::Fig3, &["level", "level-ridge", "reg-only"]),
        (Figure::Fig4, &["additive", "additive-fixed"]),
        (Figure::Fig6, &["qr", "level-ridge", "additive-ridge", "fixed-thresh"]),
    ];
    for (fig, methods) in expect {
        let rep = run_figure(&small(fig), None, &solver).unwrap();
        for m in methods {
            assert!(rep.rows.iter().any(|r| r.method == *m), "{} lacks {m}", fig.name());
        }
        for r in rep.rows.iter().filter(|r| r.error.is_none() && r.coverage.is_some()) {
            let c = r.coverage.unwrap();
            assert!((0.0..=1.0).contains(&c));
            assert!((r.miscoverage.unwrap() + c - 1.0).abs() < 1e-12);
        }
        assert!(!rep.aggregates.is_empty());
    }
}

#[test]
fn randomized_figure_reports_u() {
    let rep = run_figure(&small(Figure::Fig5), None, &SolverConfig::default()).unwrap();
    let gcc: Vec<_> = rep.rows.iter().filter(|r| r.method == "gcc-rand").collect();
    assert!(!gcc.is_empty());
    assert!(gcc.iter().all(|r| r.u.is_some_and(|u| u > -0.1 && u < 0.9)));
}

#[test]
fn reports_round_trip_through_files() {
    let rep = run_figure(&small(Figure::Fig1), None, &SolverConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("rows.csv");
    let json_path = dir.path().join("report.json");
    rep.write_path(&csv_path).unwrap();
    rep.write_path(&json_path).unwrap();
    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    assert_eq!(reader.records().count(), rep.rows.len());
    let back: ExperimentReport = serde_json::from_reader(std::fs::File::open(&json_path).unwrap()).unwrap();
    assert_eq!(back.rows, rep.rows);
}

#[test]
fn csv_protocol_on_synthetic_table() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    let mut f = std::fs::File::create(&path).unwrap();
    let cols: Vec<String> = (0..12).map(|j| format!("x{j}")).collect();
    writeln!(f, "{},target", cols.join(",")).unwrap();
    for i in 0..300usize {
        let xs: Vec<f64> = (0..12).map(|j| (((i * 31 + j * 17) % 97) as f64 / 97.0 - 0.5) * (j + 1) as f64).collect();
        let y = 100.0 + 20.0 * xs[0] - 5.0 * xs[3] + (((i * 53) % 89) as f64 / 89.0 - 0.5) * 10.0;
        let line: Vec<String> = xs.iter().map(|v| format!("{v}")).collect();
        writeln!(f, "{},{y}", line.join(",")).unwrap();
    }
    drop(f);
    let data = Dataset::from_csv_path(&path, "target").unwrap();
    let mut cfg = FigureConfig::defaults(Figure::Fig7);
    cfg.settings = vec![Setting { n: 150, d: 10 }];
    cfg.trials = 2;
    cfg.methods = vec![IntervalMethod::QR, IntervalMethod::CQR, IntervalMethod::LevelRidge];
    let rep = run_figure(&cfg, Some(&data), &SolverConfig::default()).unwrap();
    assert_eq!(rep.rows.len(), 6);
    assert!(rep.rows.iter().all(|r| r.error.is_none() && r.median_length.unwrap() > 0.0));
    assert!(run_figure(&cfg, None, &SolverConfig::default()).is_err());
    cfg.settings = vec![Setting { n: 300, d: 10 }];
    assert!(run_figure(&cfg, Some(&data), &SolverConfig::default()).is_err());
}

#[test]
fn figure_names_parse() {
    for f in [Figure::Fig1, Figure::Fig4, Figure::Fig7] {
        assert_eq!(Figure::parse(f.name()), Some(f));
    }
    assert_eq!(Figure::parse("fig9"), None);
}
