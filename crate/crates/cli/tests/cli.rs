//! End-to-end tests of the `agc` binary: subcommands, file outputs, and the
//! 0/1/2 exit-code contract.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn agc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_agc"))
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"))
}

fn run_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process exited")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(format!("{name}.toml"));
    fs::write(&path, body).unwrap();
    path
}

const TINY: &str = r#"
name = "tiny"
n = 3
p_mis = 210.0
steps = 20
termination_tol = 0.0

[generators]
source = "types"
types = ["A", "B", "C"]

[protocol]
kind = "sat"
eta = 1.0
rrl = 1.0

[topology]
kind = "cycle"
weight = 1.0
"#;

#[test]
fn run_then_verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = agc()
        .args(["run", "--config"])
        .arg(scenario("s51_sat"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    run_ok(&out);
    let trace = dir.path().join("s51_sat.trace.csv");
    let summary = dir.path().join("s51_sat.summary.toml");
    assert!(trace.exists() && summary.exists());

    let report = dir.path().join("report.txt");
    let out = agc()
        .args(["verify", "--trace"])
        .arg(&trace)
        .arg("--config")
        .arg(scenario("s51_sat"))
        .arg("--out")
        .arg(&report)
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0);
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.contains("passed = true"));
    assert!(text.contains("rrl_violation_count = 0"));
}

#[test]
fn runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = agc()
            .args(["run", "--config"])
            .arg(scenario("s51_sat"))
            .arg("--out")
            .arg(dir.path())
            .output()
            .unwrap();
        run_ok(&out);
    }
    let ta = fs::read(a.path().join("s51_sat.trace.csv")).unwrap();
    let tb = fs::read(b.path().join("s51_sat.trace.csv")).unwrap();
    assert!(ta == tb, "trace files differ between identical runs");
    let sa = fs::read(a.path().join("s51_sat.summary.toml")).unwrap();
    let sb = fs::read(b.path().join("s51_sat.summary.toml")).unwrap();
    assert!(sa == sb, "summary files differ between identical runs");
}

#[test]
fn linear_baseline_fails_verification_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = agc()
        .args(["run", "--config"])
        .arg(scenario("s51_linear"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    run_ok(&out);
    let out = agc()
        .args(["verify", "--trace"])
        .arg(dir.path().join("s51_linear.trace.csv"))
        .arg("--config")
        .arg(scenario("s51_linear"))
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 1);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("passed = false"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    // unknown key
    let bad = write_config(dir.path(), "unknown-key", &TINY.replace("steps = 20", "steps = 20\nbogus = 1"));
    let out = agc().args(["run", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    // out-of-range step rate, with the offending field named
    let bad = write_config(dir.path(), "bad-eta", &TINY.replace("eta = 1.0", "eta = 1.5"));
    let out = agc().args(["run", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("protocol"));

    // missing file
    let out = agc()
        .args(["run", "--config", "/nonexistent/nope.toml"])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn truncated_trace_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny", TINY);
    let out = agc()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    run_ok(&out);
    let trace = dir.path().join("tiny.trace.csv");
    let bytes = fs::read(&trace).unwrap();
    fs::write(&trace, &bytes[..bytes.len() - 30]).unwrap();
    let out = agc()
        .args(["verify", "--trace"])
        .arg(&trace)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn mismatched_config_hash_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny", TINY);
    let out = agc()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    run_ok(&out);
    // verifying against a different scenario must be refused
    let out = agc()
        .args(["verify", "--trace"])
        .arg(dir.path().join("tiny.trace.csv"))
        .arg("--config")
        .arg(scenario("s51_sat"))
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("hash"));
}

#[test]
fn uncertified_schedule_needs_override() {
    let dir = tempfile::tempdir().unwrap();
    // two permanently split halves: never uniformly connected
    let body = r#"
name = "split"
n = 4
p_mis = 240.0
steps = 5
termination_tol = 0.0

[generators]
source = "types"
types = ["A", "B", "C", "D"]

[protocol]
kind = "sat"
eta = 1.0
rrl = 1.0

[topology]
kind = "schedule"
b = 2

[[topology.segments]]
duration = 1
kind = "edges"
edges = [[0, 1, 1.0]]

[[topology.segments]]
duration = 1
kind = "edges"
edges = [[2, 3, 1.0]]
"#;
    let cfg = write_config(dir.path(), "split", body);
    let out = agc()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("certification"));

    let out = agc()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .arg("--allow-uncertified-schedule")
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert!(dir.path().join("split.trace.csv").exists());
}

#[test]
fn zero_steps_trace_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let body = TINY
        .replace("steps = 20", "steps = 0")
        .replace("name = \"tiny\"", "name = \"zero\"");
    let cfg = write_config(dir.path(), "zero", &body);
    let out = agc()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    run_ok(&out);
    let text = fs::read_to_string(dir.path().join("zero.trace.csv")).unwrap();
    let data_rows = text.lines().filter(|l| !l.starts_with('#')).count() - 1; // minus header
    assert_eq!(data_rows, 1);
}

#[test]
fn oracle_solutions_match_hand_kkt() {
    let dir = tempfile::tempdir().unwrap();
    // one generator absorbs the whole mismatch; the empty topology is fine
    // because the oracle never touches the network
    let solo = r#"
name = "solo"
n = 1
p_mis = 700.0
steps = 0
termination_tol = 0.0

[generators]
source = "types"
types = ["A"]

[protocol]
kind = "sat"
eta = 1.0
rrl = 1.0

[topology]
kind = "erdos_renyi"
p = 0.0
seed = 0
"#;
    let cfg = write_config(dir.path(), "solo", solo);
    let out = agc()
        .args(["oracle", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    run_ok(&out);
    let doc: toml::Value =
        toml::from_str(&fs::read_to_string(dir.path().join("solo.oracle.toml")).unwrap()).unwrap();
    let x = doc["x_star"].as_array().unwrap();
    assert!((x[0].as_float().unwrap() - 700.0).abs() < 1e-6);

    let two = r#"
name = "pair"
n = 2
p_mis = 100.0
steps = 0
termination_tol = 0.0

[generators]
source = "types"
types = ["A", "B"]

[protocol]
kind = "sat"
eta = 1.0
rrl = 1.0

[topology]
kind = "edges"
edges = [[0, 1, 1.0]]
"#;
    let cfg = write_config(dir.path(), "pair", two);
    let out = agc()
        .args(["oracle", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    run_ok(&out);
    let doc: toml::Value =
        toml::from_str(&fs::read_to_string(dir.path().join("pair.oracle.toml")).unwrap()).unwrap();
    let x = doc["x_star"].as_array().unwrap();
    assert!((x[0].as_float().unwrap() - 50.0).abs() < 1e-6);
    assert!((x[1].as_float().unwrap() - 50.0).abs() < 1e-6);
    assert!((doc["lambda_star"].as_float().unwrap() - 6.0).abs() < 1e-7);
}

#[test]
fn compare_emits_table_and_checks_instances() {
    let out = agc()
        .arg("compare")
        .arg(scenario("s51_sat"))
        .arg(scenario("s52_satsgn"))
        .arg(scenario("s51_linear"))
        .output()
        .unwrap();
    run_ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("s51_sat"));
    assert!(text.contains("s52_satsgn"));
    assert!(text.contains("s51_linear"));
    assert!(text.contains("iters_to_0.01"));

    // incomparable instances are refused
    let out = agc()
        .arg("compare")
        .arg(scenario("s51_sat"))
        .arg(scenario("s55_large"))
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn plot_emits_three_nonempty_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = agc()
        .args(["run", "--config"])
        .arg(scenario("s51_sat"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    run_ok(&out);
    let out = agc()
        .args(["plot", "--trace"])
        .arg(dir.path().join("s51_sat.trace.csv"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    run_ok(&out);
    for suffix in ["states", "rates", "residual"] {
        let path = dir.path().join(format!("s51_sat.{suffix}.dat"));
        let meta = fs::metadata(&path).unwrap();
        assert!(meta.len() > 0, "{} is empty", path.display());
    }
}

#[test]
fn out_dir_env_var_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny", TINY);
    let out = agc()
        .env("AGC_OUT_DIR", dir.path())
        .args(["run", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    run_ok(&out);
    assert!(dir.path().join("tiny.trace.csv").exists());
}

#[test]
fn seed_override_changes_hash_and_assignment() {
    let dir = tempfile::tempdir().unwrap();
    let out = agc()
        .args(["run", "--config"])
        .arg(scenario("s51_sat"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    run_ok(&out);
    let base = fs::read_to_string(dir.path().join("s51_sat.summary.toml")).unwrap();

    let out = agc()
        .args(["run", "--config"])
        .arg(scenario("s51_sat"))
        .arg("--out")
        .arg(dir.path())
        .args(["--seed-override", "1234"])
        .output()
        .unwrap();
    run_ok(&out);
    let overridden = fs::read_to_string(dir.path().join("s51_sat.summary.toml")).unwrap();
    assert_ne!(base, overridden);
    assert!(overridden.contains("generator_seed = 1234"));
}
