//! End-to-end runs of the `nsde` binary: exit codes, report determinism and
//! worker-count invariance.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nsde() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nsde"))
}

fn run_config(dir: &Path, config: &str, extra: &[&str]) -> Output {
    let config_path = dir.join("experiment.toml");
    fs::write(&config_path, config).unwrap();
    let out_dir = dir.join("out");
    nsde()
        .arg("run")
        .arg("--config")
        .arg(&config_path)
        .arg("--output")
        .arg(&out_dir)
        .args(extra)
        .output()
        .expect("binary runs")
}

const CHECK_ONLY: &str = r#"
[model]
name = "scalar_linear"
[model.params]
kappa = 0.0
a = 6.0
beta = 0.1
delta = 0.05

[grid]
h = 0.01
horizon = 1.0

[seeds]
master = 42

[[tasks]]
name = "check_conditions"
"#;

#[test]
fn check_only_config_reports_the_reduced_rate_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let output = run_config(dir.path(), CHECK_ONLY, &[]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("out/00_check_conditions.json")).unwrap(),
    )
    .unwrap();
    // kappa = 0 reduction: lambda = lambda1 - lambda2 exp(lambda1 r0)
    let lambda = report["report"]["condition"]["lambda"].as_f64().unwrap();
    let (l1, l2, r0) = (11.85f64, 0.15f64, 0.2f64);
    let expected = l1 - l2 * (l1 * r0).exp();
    assert!((lambda - expected).abs() <= 1e-12 * expected.abs());
    assert_eq!(report["pass"], serde_json::Value::Bool(true));
}

#[test]
fn reports_are_byte_identical_across_runs_and_worker_counts() {
    let config = r#"
[model]
name = "scalar_linear"

[grid]
h = 0.01
horizon = 0.6

[seeds]
master = 7
trials = 64

[[tasks]]
name = "check_conditions"

[[tasks]]
name = "exp_moment"
[tasks.params]
xi = 0.5
t_grid = [0.2, 0.4]

[[tasks]]
name = "tv_decay"
[tasks.params]
xi = 0.5
eta = 0.0
t_grid = [0.2, 0.4]

[[tasks]]
name = "simulate"
[tasks.params]
xi = 1.0
gamma = true
"#;
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let dir_c = tempfile::tempdir().unwrap();
    let a = run_config(dir_a.path(), config, &["--workers", "1"]);
    let b = run_config(dir_b.path(), config, &["--workers", "1"]);
    let c = run_config(dir_c.path(), config, &["--workers", "4"]);
    for output in [&a, &b, &c] {
        assert!(
            output.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    }
    let mut names: Vec<String> = fs::read_dir(dir_a.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.len() >= 5);
    for name in &names {
        if name == "manifest.json" {
            // identical apart from the wall-clock (and worker) fields
            let read = |dir: &Path| {
                let text = fs::read_to_string(dir.join("out/manifest.json")).unwrap();
                let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
                v.as_object_mut().unwrap().remove("wall_clock_unix");
                v.as_object_mut().unwrap().remove("workers");
                v
            };
            assert_eq!(read(dir_a.path()), read(dir_b.path()));
            assert_eq!(read(dir_a.path()), read(dir_c.path()));
            continue;
        }
        let bytes_a = fs::read(dir_a.path().join("out").join(name)).unwrap();
        let bytes_b = fs::read(dir_b.path().join("out").join(name)).unwrap();
        let bytes_c = fs::read(dir_c.path().join("out").join(name)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{name} differs between identical runs");
        assert_eq!(bytes_a, bytes_c, "{name} differs across worker counts");
    }
}

#[test]
fn infeasible_gate_reports_false_and_exits_one() {
    let config = r#"
[model.inline]
name = "wide_window"
state_matrix = [[-1.5]]
delay_matrix = [[0.1]]
kappa = 0.5
r0 = 2.0
sigma = [[1.0]]
state_lip = 1.5
segment_lip = 0.1
lambda1 = 3.0
lambda2 = 1.0
kappa1 = 1.5

[grid]
h = 0.1
horizon = 1.0

[seeds]
master = 3

[[tasks]]
name = "check_conditions"
"#;
    let dir = tempfile::tempdir().unwrap();
    let output = run_config(dir.path(), config, &[]);
    assert_eq!(output.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("out/00_check_conditions.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(
        report["report"]["condition"]["feasible"],
        serde_json::Value::Bool(false)
    );
    assert!(report["report"]["condition"]["lambda"].is_null());
}

#[test]
fn parse_and_validation_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    // not TOML at all
    let output = run_config(dir.path(), "this is { not toml", &[]);
    assert_eq!(output.status.code(), Some(2));
    // parses but fails validation (unknown task)
    let bad_task = CHECK_ONLY.replace("check_conditions", "not_a_task");
    let output = run_config(dir.path(), &bad_task, &[]);
    assert_eq!(output.status.code(), Some(2));
    // missing config file
    let output = nsde()
        .args(["run", "--config", "/nonexistent/x.toml"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn list_names_the_builtin_models_and_tasks() {
    let output = nsde().arg("list").output().unwrap();
    assert!(output.status.success());
    let text = String::from_utf8_lossy(&output.stdout);
    for name in [
        "ornstein",
        "scalar_linear",
        "cubic",
        "harnack_check",
        "tv_decay",
    ] {
        assert!(text.contains(name), "list output missing {name}");
    }
}

#[test]
fn describe_names_parameters_and_rejects_unknown_tasks() {
    let output = nsde().args(["describe", "harnack_check"]).output().unwrap();
    assert!(output.status.success());
    let text = String::from_utf8_lossy(&output.stdout);
    for param in ["observable", "xi", "eta", "t_total", "c", "trials"] {
        assert!(text.contains(param), "describe output missing {param}");
    }
    let output = nsde().args(["describe", "unknown_task"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn simulate_exports_csv_with_initial_window_and_sidecar() {
    let config = r#"
[model]
name = "ornstein"

[grid]
h = 0.05
horizon = 0.5

[seeds]
master = 11

[[tasks]]
name = "simulate"
[tasks.params]
xi = 1.0
"#;
    let dir = tempfile::tempdir().unwrap();
    let output = run_config(dir.path(), config, &[]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let csv = fs::read_to_string(dir.path().join("out/00_simulate.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "time,x_1");
    // r0 = 0.25 at h = 0.05 gives 5 history rows + 10 steps + t = 0 row
    assert_eq!(lines.count(), 16);
    assert!(csv.starts_with("time,x_1\n-0.25,1\n"));
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/00_simulate.json")).unwrap())
            .unwrap();
    assert_eq!(sidecar["report"]["model"], "ornstein");
    assert_eq!(sidecar["report"]["h"], 0.05);
}

#[test]
fn runtime_blowup_exits_three() {
    // an infeasible-but-valid declared model whose dynamics explodes at this
    // step size: strong positive feedback through the delay
    let config = r#"
[model.inline]
name = "explosive"
state_matrix = [[30.0]]
delay_matrix = [[0.0]]
kappa = 0.0
r0 = 0.2
sigma = [[1.0]]
state_lip = 30.0
segment_lip = 0.0
lambda1 = 1.0
lambda2 = 0.5
kappa1 = -30.0

[grid]
h = 0.1
horizon = 200.0

[seeds]
master = 5

[[tasks]]
name = "simulate"
[tasks.params]
xi = 1.0
"#;
    let dir = tempfile::tempdir().unwrap();
    let output = run_config(dir.path(), config, &[]);
    assert_eq!(
        output.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
}
