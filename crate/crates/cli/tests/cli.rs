use std::path::Path;
use std::process::{Command, Output};

fn ipmsm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ipmsm")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn config(name: &str, lt: f64) -> String {
    format!(
        r#"name = "{name}"
duration = 0.4
speed_profile = {{ points = [[0.0, 100.0]] }}
load_profile = {{ steps = [[0.0, 0.5]] }}

[initial]
current_dq = [0.0, 0.50505050505]

[observer]
gamma = 10.0
alpha = 20.0

[[expect]]
metric = "max_theta_err"
from = 0.3
lt = {lt}
"#
    )
}

fn write(dir: &Path, file: &str, text: &str) -> String {
    let p = dir.join(file);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_exit_code_follows_assertions() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let good = write(dir.path(), "good.toml", &config("good", 0.02));
    let o = ipmsm(&["run", &good, "--out", out.to_str().unwrap(), "--plot"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS"));
    for f in ["timeseries.csv", "pe.csv", "summary.json", "theta_err.svg", "lambda_err.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }

    let bad = write(dir.path(), "bad.toml", &config("bad", 1e-12));
    let o = ipmsm(&["run", &bad, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn run_rejects_a_broken_config() {
    let dir = tempfile::tempdir().unwrap();
    let broken = write(dir.path(), "x.toml", &config("x", 0.02).replace("alpha = 20.0", "alpha = -20.0"));
    let o = ipmsm(&["run", &broken, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("observer.alpha"));
}

#[test]
fn observers_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &config("c", 0.02));
    let out = dir.path().join("o");
    let o = ipmsm(&["run", &cfg, "--out", out.to_str().unwrap(), "--observers", "proposed,chonam"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let header = std::fs::read_to_string(out.join("timeseries.csv")).unwrap();
    let header = header.lines().next().unwrap();
    assert!(header.contains("proposed_theta_err") && header.contains("chonam_theta_err"));
}

#[test]
fn batch_reports_each_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let cfgs = dir.path().join("cfgs");
    std::fs::create_dir(&cfgs).unwrap();
    write(&cfgs, "a.toml", &config("a", 0.02));
    let out = dir.path().join("out");
    let o = ipmsm(&["batch", cfgs.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(out.join("a").join("summary.json").exists());

    write(&cfgs, "b.toml", &config("b", 1e-12));
    let o = ipmsm(&["batch", cfgs.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let s = stdout(&o);
    assert!(s.contains("PASS a") && s.contains("FAIL b"), "{s}");
}

#[test]
fn pe_separates_rotating_and_silent_logs() {
    let dir = tempfile::tempdir().unwrap();
    let log = |name: &str, amp: f64| {
        let mut text = String::from("t,v_a,v_b,i_a,i_b\n");
        let (w, dt) = (100.0f64, 1e-4);
        for k in 0..5000 {
            let t = k as f64 * dt;
            let (c, s) = ((w * t).cos(), (w * t).sin());
            text += &format!("{t},{},{},{},{}\n", amp * 12.0 * -s, amp * 12.0 * c, amp * c, amp * s);
        }
        write(dir.path(), name, &text)
    };
    let report = dir.path().join("report.csv");
    let rot = log("rot.csv", 1.0);
    let o = ipmsm(&["pe", &rot, "--delta", "1e-3", "--skip", "0.2", "--out", report.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("PE at level 1e-3: yes"));
    assert!(std::fs::read_to_string(&report).unwrap().lines().count() > 10);

    let silent = log("silent.csv", 0.0);
    let o = ipmsm(&["pe", &silent, "--delta", "1e-3"]);
    assert_eq!(o.status.code(), Some(1));

    let missing = write(dir.path(), "bad.csv", "t,v_a\n0,1\n");
    let o = ipmsm(&["pe", &missing]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("v_b"));
}

#[test]
fn verify_runs_selected_criteria() {
    let scenarios = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let s = scenarios.to_str().unwrap();
    let o = ipmsm(&["verify", "--scenarios", s, "--only", "7,9"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("[PASS]  7.") && text.contains("[PASS]  9.") && text.contains("2/2"));
    assert_eq!(ipmsm(&["verify", "--scenarios", s, "--only", "13"]).status.code(), Some(2));
}
