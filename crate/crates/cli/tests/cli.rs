use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn optbft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optbft")).args(args).output().expect("binary runs")
}

fn example(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name).display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn check_prints_thresholds() {
    let o = optbft(&["check", "--scenario", &example("optrbc_n7_honest.json")]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("opt=5 vote=4 ready=4 commit=5 amplify=3 decode_k=3"), "{text}");
}

#[test]
fn invalid_parameters_exit_with_code_two() {
    let o = optbft(&["check", "--scenario", &example("optrbc_n7_honest.json"), "--set", "n=6", "--set", "f=2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("3f + 1"));
    let o = optbft(&["check", "--scenario", &example("optrbc_n7_honest.json"), "--set", "adversary.silent_count=3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_with_code_one() {
    assert_eq!(optbft(&["bogus"]).status.code(), Some(1));
    assert_eq!(optbft(&["run", "--scenario", "/definitely/missing.json"]).status.code(), Some(1));
    let o = optbft(&["sweep", "--scenario", &example("optrbc_n7_honest.json"), "--sweep", "no_equals_sign"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn run_writes_its_three_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = optbft(&["run", "--scenario", &example("optrbc_n7_honest.json"), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["metrics.csv", "summary.json", "report.txt"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("scenario_id,party,instance,event,virtual_time_us,steps,class,bytes_sent"));
}

fn sweep(args: &[&str]) -> (PathBuf, tempfile::TempDir, Output) {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let mut all = vec!["sweep", "--out", out.to_str().unwrap()];
    all.extend_from_slice(args);
    let o = optbft(&all);
    (out, dir, o)
}

#[test]
fn sweep_over_n_produces_one_row_per_point() {
    let (out, _dir, o) = sweep(&["--scenario", &example("balanced_64k.json"), "--sweep", "n=4,7,10,16"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut r = csv::Reader::from_path(out.join("aggregate.csv")).unwrap();
    let n_col = r.headers().unwrap().iter().position(|h| h == "n").unwrap();
    let ns: Vec<String> = r.records().map(|rec| rec.unwrap()[n_col].to_string()).collect();
    assert_eq!(ns, ["4", "7", "10", "16"]);
    assert!(out.join("run-003").join("metrics.csv").is_file());
}

#[test]
fn one_extra_silent_fault_flips_the_latency_class() {
    let (out, _dir, o) =
        sweep(&["--scenario", &example("optrbc_n7_silent2.json"), "--sweep", "adversary.silent_count=1,2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut r = csv::Reader::from_path(out.join("aggregate.csv")).unwrap();
    let h = r.headers().unwrap().clone();
    let col = |name: &str| h.iter().position(|x| x == name).unwrap();
    let rows: Vec<(String, String)> =
        r.records().map(|rec| rec.unwrap()).map(|rec| (rec[col("opt2")].to_string(), rec[col("std3or4")].to_string())).collect();
    assert_eq!(rows, [("6".to_string(), "0".to_string()), ("0".to_string(), "5".to_string())]);
}

#[test]
fn sweep_rejects_unknown_fields_before_running() {
    let (out, _dir, o) = sweep(&["--scenario", &example("optrbc_n7_honest.json"), "--sweep", "nonsense.field=1,2"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!out.join("run-000").exists());
}

#[test]
fn every_example_checks_and_runs_safe() {
    let dir = tempfile::tempdir().unwrap();
    let examples = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples");
    let mut seen = 0;
    for entry in std::fs::read_dir(&examples).unwrap() {
        let path = entry.unwrap().path();
        let p = path.to_str().unwrap();
        assert!(optbft(&["check", "--scenario", p]).status.success(), "check {p}");
        let out = dir.path().join(path.file_stem().unwrap());
        let o = optbft(&["run", "--scenario", p, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "run {p}: {}", stderr(&o));
        assert!(stdout(&o).contains("verdict: safe"));
        seen += 1;
    }
    assert!(seen >= 10);
}
