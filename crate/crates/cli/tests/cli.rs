//! Binary behavior: exit codes, diagnostics, output hygiene, overrides.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_minsup"))
}

fn sandbox(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli_behavior").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

const GOOD: &str = "[scaffold]\n\
dim = 1\n\
steps = 3\n\
horizon = 1.0\n\
mode = nonrecombining\n\
[generator]\n\
kind = quad\n\
lambda = 0.8\n\
[payoff]\n\
kind = call\n\
strike = 0.2\n\
[run]\n\
command = solve\n";

#[test]
fn help_and_version_exit_zero() {
    for flag in ["--help", "--version"] {
        let out = bin().arg(flag).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{flag}");
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = bin().args(["run", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn validate_accepts_a_complete_config() {
    let dir = sandbox("validate_ok");
    let config = write(&dir, "exp.cfg", GOOD);
    let out = bin().arg("validate").arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("ok: solve"));
}

#[test]
fn validate_reports_each_problem_with_its_line() {
    let dir = sandbox("validate_bad");
    let body = "[scaffold]\n\
dim = 1\n\
steps = 3\n\
steps = 4\n\
horizon = -2.0\n\
mode = sideways\n\
typo = 1\n\
[generator]\n\
kind = abs\n\
[run]\n\
command = solve\n";
    let config = write(&dir, "exp.cfg", body);
    let out = bin().arg("validate").arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(64));
    let err = text(&out.stderr);
    assert!(err.contains("line 4") && err.contains("first set on line 3"), "{err}");
    assert!(err.contains("line 5") && err.contains("horizon"), "{err}");
    assert!(err.contains("line 6") && err.contains("sideways"), "{err}");
    assert!(err.contains("line 7") && err.contains("typo"), "{err}");
    assert!(err.contains("lambda"), "{err}");
    assert!(err.contains("[payoff]") || err.contains("payoff"), "{err}");
}

#[test]
fn missing_config_file_is_a_config_error() {
    let dir = sandbox("missing");
    let out_dir = dir.join("out");
    let out = bin()
        .args(["run", "/nonexistent/exp.cfg", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(64));
    assert!(!out_dir.exists(), "no outputs may appear on a config error");
}

#[test]
fn rejected_config_produces_no_partial_outputs() {
    let dir = sandbox("no_partials");
    // The kernel bound fails: |a| sqrt(dt) >= 1.
    let body = "[scaffold]\n\
dim = 1\n\
steps = 3\n\
horizon = 1.0\n\
mode = nonrecombining\n\
[generator]\n\
kind = linear\n\
a = 2.0\n\
b = 0.0\n\
[payoff]\n\
kind = identity\n\
[run]\n\
command = solve\n";
    let config = write(&dir, "exp.cfg", body);
    let out_dir = dir.join("out");
    let out = bin().arg("run").arg(&config).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(64), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("kernel"), "{}", text(&out.stderr));
    assert!(!out_dir.exists());
}

#[test]
fn oversized_scaffold_is_rejected_up_front() {
    let dir = sandbox("budget");
    let body = "[scaffold]\n\
dim = 2\n\
steps = 30\n\
horizon = 1.0\n\
mode = nonrecombining\n\
[generator]\n\
kind = zero\n\
[payoff]\n\
kind = identity\n\
[run]\n\
command = solve\n";
    let config = write(&dir, "exp.cfg", body);
    let out = bin().arg("validate").arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(64));
    assert!(text(&out.stderr).contains("budget"), "{}", text(&out.stderr));
}

#[test]
fn solve_writes_the_expected_table() {
    let dir = sandbox("solve_table");
    let body = "[scaffold]\n\
dim = 1\n\
steps = 2\n\
horizon = 1.0\n\
mode = nonrecombining\n\
[generator]\n\
kind = zero\n\
[payoff]\n\
kind = identity\n\
[run]\n\
command = solve\n";
    let config = write(&dir, "exp.cfg", body);
    let out_dir = dir.join("out");
    let out = bin().arg("run").arg(&config).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("solution.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "node,time_index,time,state,y,z_0,max_slack");
    let root: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(root[0], "0");
    assert_eq!(root[1], "0");
    // Zero driver and centered payoff: the root value vanishes up to the
    // kink error of the inner search.
    let y: f64 = root[4].parse().unwrap();
    assert!(y.abs() < 1e-7, "root value {y:.3e}");
}

#[test]
fn verify_reports_a_clean_certificate() {
    let dir = sandbox("verify_clean");
    let config = write(&dir, "exp.cfg", &GOOD.replace("command = solve", "command = verify"));
    let out_dir = dir.join("out");
    let out = bin().arg("run").arg(&config).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("verify.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("pass,worst_slack"));
    assert!(lines.next().unwrap().starts_with("true,"));
}

#[test]
fn seed_override_changes_sampled_cases() {
    let dir = sandbox("seed_override");
    let body = GOOD.replace(
        "command = solve",
        "command = properties\nseed = 7\ncases = 10",
    );
    let config = write(&dir, "exp.cfg", &body);
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    let run = |out: &Path, extra: &[&str]| {
        let status = bin()
            .arg("run")
            .arg(&config)
            .arg("--out")
            .arg(out)
            .args(extra)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
    };
    run(&out_a, &[]);
    run(&out_b, &["--seed", "8"]);
    let a = std::fs::read(out_a.join("property_cases.csv")).unwrap();
    let b = std::fs::read(out_b.join("property_cases.csv")).unwrap();
    assert_ne!(a, b, "a different seed must sample different cases");
}

#[test]
fn unmet_study_tolerance_exits_with_the_violation_code() {
    let dir = sandbox("violation");
    // Three levels leave a driver gap near lambda / 8, far above tolerance.
    let body = "[scaffold]\n\
dim = 1\n\
steps = 3\n\
horizon = 1.0\n\
mode = nonrecombining\n\
[generator]\n\
kind = quad\n\
lambda = 0.7\n\
[payoff]\n\
kind = square\n\
[run]\n\
command = stability\n\
levels = 3\n\
tolerance = 1e-9\n";
    let config = write(&dir, "exp.cfg", body);
    let out_dir = dir.join("out");
    let out = bin().arg("run").arg(&config).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", text(&out.stderr));
    assert!(out_dir.join("stability.csv").exists(), "results are still written");
}

#[test]
fn tolerance_override_flips_the_stability_outcome() {
    let dir = sandbox("tolerance_override");
    let body = "[scaffold]\n\
dim = 1\n\
steps = 3\n\
horizon = 1.0\n\
mode = nonrecombining\n\
[generator]\n\
kind = quad\n\
lambda = 0.7\n\
[payoff]\n\
kind = square\n\
[run]\n\
command = stability\n\
levels = 6\n\
tolerance = 1e-9\n";
    let config = write(&dir, "exp.cfg", body);
    let strict = bin()
        .arg("run")
        .arg(&config)
        .arg("--out")
        .arg(dir.join("strict"))
        .output()
        .unwrap();
    assert_eq!(strict.status.code(), Some(2));
    let loose = bin()
        .arg("run")
        .arg(&config)
        .args(["--tolerance", "0.5", "--out"])
        .arg(dir.join("loose"))
        .output()
        .unwrap();
    assert_eq!(loose.status.code(), Some(0), "{}", text(&loose.stderr));
}

#[test]
fn comments_and_spacing_are_tolerated() {
    let dir = sandbox("comments");
    let body = "# experiment description\n\
\n\
[scaffold]\n\
dim = 1\n\
steps   =   2\n\
horizon = 1.0\n\
mode = recombining\n\
\n\
# driver\n\
[generator]\n\
kind = abs\n\
lambda = 0.5\n\
\n\
[payoff]\n\
kind = put\n\
strike = 0.0\n\
\n\
[run]\n\
command = solve\n";
    let config = write(&dir, "exp.cfg", body);
    let out = bin().arg("validate").arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
}
