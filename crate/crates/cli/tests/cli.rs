use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use erwg::experiment::{simulation, verification, write_simulation, ExperimentConfig};
use erwg::verify::Suite;
use serde_json::Value;
use tempfile::TempDir;

fn erwg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_erwg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn walk_file(dir: &Path, p: f64) -> PathBuf {
    let path = dir.join(format!("walk_{p}.json"));
    let body = format!(r#"{{"k":2,"edges":[[1,2],[2,1]],"p":[{p},{p}],"q":[0.5,0.5]}}"#);
    fs::write(&path, body).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn analyze_classifies_the_two_elephant_regimes() {
    let dir = TempDir::new().unwrap();
    for (p, label) in [(0.6, "diffusive"), (0.75, "critical"), (0.9, "superdiffusive")] {
        let cfg = walk_file(dir.path(), p);
        let out = erwg(&["analyze", "--config", s(&cfg), "--json"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["regime"]["global"], label, "p = {p}");
        let eta = v["spectrum"]["eta"].as_f64().unwrap();
        assert!((eta - (2.0 * p - 1.0)).abs() < 1e-12, "p = {p}: eta {eta}");
    }
}

#[test]
fn analyze_writes_artifacts_when_given_an_output_directory() {
    let dir = TempDir::new().unwrap();
    let cfg = walk_file(dir.path(), 0.6);
    let out_dir = dir.path().join("a");
    let out = erwg(&["analyze", "--config", s(&cfg), "--out", s(&out_dir)]);
    assert!(out.status.success());
    let saved: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("analysis.json")).unwrap()).unwrap();
    assert_eq!(saved["regime"]["global"], "diffusive");
    let exp = ExperimentConfig::load(&out_dir.join("experiment.json")).unwrap();
    assert_eq!(exp.hash(), saved["experiment_hash"].as_str().unwrap());
}

#[test]
fn simulate_is_reproducible_and_worker_independent() {
    let dir = TempDir::new().unwrap();
    let cfg = walk_file(dir.path(), 0.9);
    let run = |name: &str, seed: &str, workers: &str| {
        let d = dir.path().join(name);
        let out = erwg(&[
            "simulate",
            "--config",
            s(&cfg),
            "--replicas",
            "7",
            "--horizon",
            "500",
            "--seed",
            seed,
            "--workers",
            workers,
            "--out",
            s(&d),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(d.join("checkpoints.csv")).unwrap()
    };
    let a = run("a", "5", "1");
    let b = run("b", "5", "3");
    let c = run("c", "6", "1");
    assert_eq!(a, b);
    assert_ne!(a, c);

    let meta: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a/run.json")).unwrap()).unwrap();
    let checkpoints = meta["checkpoints"].as_array().unwrap().len();
    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("replica,n,S_1,S_2"));
    assert_eq!(lines.count(), 7 * checkpoints);
}

#[test]
fn simulate_output_matches_the_library() {
    let dir = TempDir::new().unwrap();
    let cfg_path = walk_file(dir.path(), 0.6);
    let cli_dir = dir.path().join("cli");
    let out = erwg(&[
        "simulate",
        "--config",
        s(&cfg_path),
        "--replicas",
        "4",
        "--horizon",
        "300",
        "--seed",
        "42",
        "--out",
        s(&cli_dir),
    ]);
    assert!(out.status.success());

    let mut cfg = ExperimentConfig::load(&cfg_path).unwrap();
    cfg.replicas = 4;
    cfg.horizon = 300;
    cfg.master_seed = 42;
    let lib_dir = dir.path().join("lib");
    write_simulation(&cfg, &simulation(&cfg, None).unwrap(), &lib_dir).unwrap();
    for f in ["checkpoints.csv", "run.json"] {
        assert_eq!(
            fs::read(cli_dir.join(f)).unwrap(),
            fs::read(lib_dir.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn simulate_without_an_output_directory_is_an_error() {
    let dir = TempDir::new().unwrap();
    let cfg = walk_file(dir.path(), 0.6);
    let out = erwg(&["simulate", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_oracle_suite_passes_and_report_round_trips() {
    let dir = TempDir::new().unwrap();
    let cfg_path = walk_file(dir.path(), 0.6);
    let out_dir = dir.path().join("v");
    let out = erwg(&[
        "verify",
        "--config",
        s(&cfg_path),
        "--suite",
        "oracle",
        "--replicas",
        "2000",
        "--horizon",
        "200",
        "--json",
        "--out",
        s(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));

    let mut cfg = ExperimentConfig::load(&cfg_path).unwrap();
    cfg.suite = Suite::Oracle;
    cfg.replicas = 2000;
    cfg.horizon = 200;
    let lib = verification(&cfg, None).unwrap();
    assert_eq!(
        String::from_utf8(out.stdout).unwrap().trim_end(),
        lib.to_json().trim_end()
    );
    assert_eq!(fs::read_to_string(out_dir.join("report.json")).unwrap(), lib.to_json());

    let shown = erwg(&["report", s(&out_dir)]);
    assert_eq!(shown.status.code(), Some(0));
    let txt = fs::read_to_string(out_dir.join("report.txt")).unwrap();
    let shown = String::from_utf8(shown.stdout).unwrap();
    let (shown_body, shown_footer) = shown.trim_end().rsplit_once('\n').unwrap();
    let (txt_body, txt_footer) = txt.trim_end().rsplit_once('\n').unwrap();
    assert_eq!(shown_body, txt_body);
    assert_eq!(shown_footer, "8 records, 0 hard failures");
    assert!(txt_footer.starts_with("8 records, 0 hard failures, "), "{txt_footer}");
}

#[test]
fn verify_exits_nonzero_on_a_hard_failure() {
    let dir = TempDir::new().unwrap();
    let cfg = walk_file(dir.path(), 0.6);
    // a zero oracle tolerance cannot be met by floating-point recursions
    let out = erwg(&[
        "verify",
        "--config",
        s(&cfg),
        "--suite",
        "oracle",
        "--replicas",
        "500",
        "--horizon",
        "200",
        "--tol",
        "oracle=0",
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn unknown_tolerance_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = walk_file(dir.path(), 0.6);
    let out = erwg(&[
        "verify",
        "--config",
        s(&cfg),
        "--suite",
        "oracle",
        "--tol",
        "no_such_key=1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
}

#[test]
fn limits_writes_report_and_moment_table() {
    let dir = TempDir::new().unwrap();
    let cfg = walk_file(dir.path(), 0.75);
    let out_dir = dir.path().join("l");
    let out = erwg(&["limits", "--config", s(&cfg), "--horizon", "50", "--out", s(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["regime"]["global"], "critical");
    assert_eq!(
        report,
        serde_json::from_str::<Value>(&fs::read_to_string(out_dir.join("limits.json")).unwrap()).unwrap()
    );
    let table = fs::read_to_string(out_dir.join("moments.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("n,mean_1,mean_2,M_11,M_12,M_21,M_22"));
    let last: Vec<f64> = lines.last().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(last[0], 50.0);
    assert_eq!(last[4], last[5]);
}
