use std::path::{Path, PathBuf};

use ipmsm_core::{
    plot::plot_run,
    scenario::{read_csv, run_scenario, write_outputs, FilterInitMode, ScenarioConfig},
    verify, Error, Vec2,
};

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn short(duration: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::load(&scenarios_dir().join("fig2.toml")).unwrap();
    cfg.duration = duration;
    cfg.dt = 2e-5;
    cfg.expect.clear();
    cfg
}

#[test]
fn shipped_scenarios_round_trip_through_toml() {
    for name in verify::SCENARIOS {
        let cfg = ScenarioConfig::load(&scenarios_dir().join(name)).unwrap();
        let back = ScenarioConfig::from_toml_str(&cfg.to_toml(), Path::new(name)).unwrap();
        assert_eq!(cfg, back, "{name}");
    }
}

#[test]
fn runs_are_bit_identical() {
    let cfg = short(0.05);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_outputs(&run_scenario(&cfg).unwrap(), a.path()).unwrap();
    write_outputs(&run_scenario(&cfg).unwrap(), b.path()).unwrap();
    for f in ["timeseries.csv", "pe.csv", "summary.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn three_step_run_writes_three_rows() {
    let mut cfg = short(3.0 * 2e-5);
    cfg.report_stride = cfg.dt;
    let out = run_scenario(&cfg).unwrap();
    assert_eq!(out.trace.len(), 3);
    let dir = tempfile::tempdir().unwrap();
    write_outputs(&out, dir.path()).unwrap();
    let path = dir.path().join("timeseries.csv");
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 4);
    let table = read_csv(&path).unwrap();
    let t = table.column("t").unwrap();
    assert_eq!(t, vec![0.0, 2e-5, 4e-5]);
    let th = table.column("proposed_theta_err").unwrap();
    for (k, e) in out.trace.estimates[0].iter().enumerate() {
        assert!((th[k] - e.theta_err).abs() <= 1e-8 * e.theta_err.abs());
    }
}

#[test]
fn single_step_run_has_one_record_and_no_assertions() {
    let out = run_scenario(&short(2e-5)).unwrap();
    assert_eq!(out.trace.len(), 1);
    assert!(out.summary.assertions.is_empty());
    assert!(out.summary.passed);
    assert!(out.pe.windows.is_empty());
}

#[test]
fn matched_start_removes_the_initial_transient() {
    let residual_early = |mode: FilterInitMode| {
        let mut cfg = short(0.2);
        cfg.filter_init = mode;
        let out = run_scenario(&cfg).unwrap();
        let tr = &out.trace;
        let y_max = tr.plant.iter().map(|r| r.y.abs()).fold(0.0, f64::max);
        let r = tr.plant[tr.range(0.0, 8.0 / cfg.observer.alpha)]
            .iter()
            .map(|r| r.residual.abs())
            .fold(0.0, f64::max);
        r / y_max
    };
    let (m, z) = (residual_early(FilterInitMode::Matched), residual_early(FilterInitMode::Zero));
    assert!(m < 1e-6, "{m:e}");
    assert!(z > 100.0 * m, "zero {z:e}, matched {m:e}");
}

#[test]
fn failed_expectation_fails_the_summary() {
    let mut cfg = ScenarioConfig::load(&scenarios_dir().join("fig2.toml")).unwrap();
    cfg.duration = 0.1;
    cfg.dt = 2e-5;
    cfg.expect.retain(|e| e.lt.is_some());
    for e in &mut cfg.expect {
        e.from = None;
        e.lt = Some(-1.0);
    }
    assert!(!cfg.expect.is_empty());
    let out = run_scenario(&cfg).unwrap();
    assert!(!out.summary.passed);
    assert!(out.summary.assertions.iter().all(|a| !a.passed));
}

#[test]
fn config_errors_name_the_problem() {
    let base = std::fs::read_to_string(scenarios_dir().join("fig2.toml")).unwrap();
    let bad_dt = base.replace("dt = 5e-6", "dt = -1.0");
    assert_ne!(bad_dt, base);
    let e = ScenarioConfig::from_toml_str(&bad_dt, Path::new("x.toml")).unwrap_err();
    assert!(matches!(e, Error::Config { ref field, .. } if field == "dt"), "{e}");

    let unknown = format!("bogus = 1\n{base}");
    let e = ScenarioConfig::from_toml_str(&unknown, Path::new("x.toml")).unwrap_err();
    assert!(matches!(e, Error::Parse { .. }) && e.to_string().contains("bogus"), "{e}");

    let e = ScenarioConfig::load(Path::new("/nonexistent/s.toml")).unwrap_err();
    assert!(e.to_string().contains("/nonexistent/s.toml"), "{e}");
}

#[test]
fn plots_are_written_for_a_run() {
    let out = run_scenario(&short(0.2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = plot_run(&out, dir.path()).unwrap();
    assert_eq!(files.len(), 6);
    for f in files {
        let text = std::fs::read_to_string(&f).unwrap();
        assert!(text.starts_with("<svg") && text.len() > 1000, "{}", f.display());
    }
}

#[test]
fn empty_run_writes_no_plots() {
    let mut out = run_scenario(&short(2e-5)).unwrap();
    out.trace.plant.clear();
    out.trace.estimates.iter_mut().for_each(Vec::clear);
    let dir = tempfile::tempdir().unwrap();
    assert!(plot_run(&out, dir.path()).unwrap().is_empty());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn small_gain_halves_until_averaging_holds() {
    let phi = vec![Vec2::new(2.0, 0.0), Vec2::new(0.0, 1.0)];
    assert_eq!(verify::small_gain(10.0, &phi, 10.0), 2.5);
    assert_eq!(verify::small_gain(1.0, &phi, 10.0), 1.0);
}

#[test]
fn regression_residual_settles_on_shipped_scenarios() {
    // fig5 is covered by the tail test below.
    for name in verify::SCENARIOS.iter().filter(|n| **n != "fig5.toml") {
        let mut cfg = ScenarioConfig::load(&scenarios_dir().join(name)).unwrap();
        cfg.expect.clear();
        let r = run_scenario(&cfg).unwrap().summary.regression_residual;
        assert!(r < 1e-6, "{name}: {r:e}");
    }
}

#[test]
fn fig5_residual_tail_is_the_filter_transient() {
    // With zero filter states the residual is ε(0) e^{−αt}; at α = 200 its
    // initial size needs slightly more than 8/α to fall below 1e−6.
    let mut cfg = ScenarioConfig::load(&scenarios_dir().join("fig5.toml")).unwrap();
    cfg.expect.clear();
    cfg.duration = 0.5;
    let alpha = cfg.observer.alpha;
    let out = run_scenario(&cfg).unwrap();
    let tr = &out.trace;
    let y_max = tr.plant.iter().map(|r| r.y.abs()).fold(0.0, f64::max);
    let idx = tr.range(0.0, 6.0 / alpha);
    let times: Vec<f64> = tr.plant[idx.clone()].iter().map(|r| r.t).collect();
    let res: Vec<f64> = tr.plant[idx].iter().map(|r| r.residual.abs()).collect();
    let rate = ipmsm_core::analysis::fit_decay_rate(&times, &res, 0.0).unwrap();
    assert!((rate / alpha - 1.0).abs() < 0.01, "{rate}");
    let predicted = tr.plant[0].residual.abs() * (-8.0f64).exp() / y_max;
    let late = tr.plant[tr.range(8.0 / alpha, 8.0 / alpha)][0].residual.abs() / y_max;
    assert!((late / predicted - 1.0).abs() < 0.01, "{late:e} vs {predicted:e}");
    let after = tr.plant[tr.range(10.0 / alpha, cfg.duration)]
        .iter()
        .map(|r| r.residual.abs())
        .fold(0.0, f64::max);
    assert!(after / y_max < 1e-6, "{:e}", after / y_max);
}
