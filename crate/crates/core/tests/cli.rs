mod common;

use serde_json::Value;
use seqcombine::mcsim::SimReport;
use seqcombine::survdata::{write_subjects_csv, Subject};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn seqcombine(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqcombine"))
        .args(args)
        .env_remove("SEQCOMBINE_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn bundled_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/paper_table1.json")
}

fn write_subjects(dir: &TempDir, name: &str, subjects: &[Subject]) -> PathBuf {
    let p = dir.path().join(name);
    write_subjects_csv(subjects, std::fs::File::create(&p).unwrap()).unwrap();
    p
}

#[test]
fn usage_errors_exit_with_config_code() {
    assert_eq!(code(&seqcombine(&["frobnicate"])), 2);
    assert_eq!(code(&seqcombine(&["simulate", "--reps", "many"])), 2);
}

#[test]
fn zero_reps_is_a_config_error_naming_the_field() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", r#"{"reps": 0}"#);
    let out = seqcombine(&["simulate", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("reps"));
}

#[test]
fn delayed_test_without_delay_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", r#"{"tests": [{"family": "wilcoxon-IV"}]}"#);
    let out = seqcombine(&["simulate", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("t_delay"));
}

#[test]
fn bundled_config_reports_every_test_and_scenario() {
    let dir = TempDir::new().unwrap();
    let out = seqcombine(&[
        "simulate",
        "--config",
        s(&bundled_config()),
        "--out",
        s(dir.path()),
        "--reps",
        "4",
        "--threads",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "scenario,test,delta,reps,rate,mc_se,avg_analyses,avg_analyses_se,flagged"
    );
    assert_eq!(lines.count(), 44);

    let json = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let reports: Vec<SimReport> = serde_json::from_str(&json).unwrap();
    assert_eq!(reports.len(), 4);
    let again = serde_json::to_string_pretty(&reports).unwrap() + "\n";
    assert_eq!(again, json);

    let cov = std::fs::read_to_string(dir.path().join("covariance.csv")).unwrap();
    assert_eq!(cov.lines().count(), 1 + 11 * 5);
}

#[test]
fn scenario_and_test_filters_apply() {
    let dir = TempDir::new().unwrap();
    let out = seqcombine(&[
        "simulate",
        "--out",
        s(dir.path()),
        "--reps",
        "2",
        "--scenario",
        "log-odds",
        "--test",
        "logrank",
        "--test",
        "rmst",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(!dir.path().join("covariance.csv").exists());

    let out = seqcombine(&["simulate", "--out", s(dir.path()), "--scenario", "nope"]);
    assert_eq!(code(&out), 2);
}

fn boundaries(dir: &TempDir, cov: &str, plan: &str, method: &str) -> Output {
    let c = write(dir, "cov.csv", cov);
    let p = write(dir, "plan.json", plan);
    seqcombine(&["boundaries", s(&c), s(&p), "--method", method])
}

fn critical(out: &Output) -> Vec<f64> {
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    v["critical"].as_array().unwrap().iter().map(|c| c.as_f64().unwrap()).collect()
}

#[test]
fn single_look_identity_gives_the_normal_quantile() {
    let dir = TempDir::new().unwrap();
    for method in ["mvn", "indinc"] {
        let out = boundaries(&dir, "1\n", r#"{"alpha": 0.05, "fractions": [1]}"#, method);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        assert!((critical(&out)[0] - 1.96).abs() < 1e-3);
    }
}

#[test]
fn brownian_covariance_agrees_across_methods() {
    let dir = TempDir::new().unwrap();
    let cov: String = (1..=5)
        .map(|i| (1..=5).map(|j| i.min(j).to_string()).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    let plan = r#"{"alpha": 0.05, "fractions": [0.05, 0.1, 0.4, 0.7, 1.0]}"#;
    let a = critical(&boundaries(&dir, &cov, plan, "indinc"));
    let b = critical(&boundaries(&dir, &cov, plan, "mvn"));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 2e-3, "{a:?} vs {b:?}");
    }
}

#[test]
fn boundary_input_errors_have_distinct_codes() {
    let dir = TempDir::new().unwrap();
    let plan = r#"{"alpha": 0.05, "fractions": [0.5, 1.0]}"#;
    assert_eq!(code(&boundaries(&dir, "1,2\n2,1\n", plan, "mvn")), 4);
    assert_eq!(code(&boundaries(&dir, "1,0.5\n0.5,1\n", r#"{"alpha": 0.05, "fractions": [1.0, 0.5]}"#, "mvn")), 2);
    assert_eq!(code(&boundaries(&dir, "1\n", plan, "mvn")), 3);
    assert_eq!(code(&boundaries(&dir, "1,0.4\n0.5,1\n", plan, "mvn")), 3);
}

fn analyze(data: &Path, test: &str, look: usize, state: Option<&Path>) -> Output {
    let look = look.to_string();
    let mut args = vec!["analyze", s(data), "--test", test, "--look", &look];
    if let Some(p) = state {
        args.extend(["--state", s(p)]);
    }
    seqcombine(&args)
}

fn looks(out: &Output) -> Vec<Value> {
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    v["looks"].as_array().unwrap().clone()
}

#[test]
fn empty_dataset_has_zero_statistic_and_no_rejection() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "empty.csv", "entry_time,event_time,arm\n");
    let out = analyze(&data, "wilcoxon-adjusted", 1, None);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let l = &looks(&out)[0];
    assert_eq!(l["z"].as_f64(), Some(0.0));
    assert_eq!(l["reject"], Value::Bool(false));
}

#[test]
fn schema_and_look_errors() {
    let dir = TempDir::new().unwrap();
    let bad = write(&dir, "bad.csv", "entry,event,arm\n0.1,0.2,1\n");
    assert_eq!(code(&analyze(&bad, "logrank", 1, None)), 3);
    let good = write(&dir, "good.csv", "entry_time,event_time,arm\n0.1,0.2,1\n");
    assert_eq!(code(&analyze(&good, "logrank", 0, None)), 2);
    assert_eq!(code(&analyze(&good, "logrank", 6, None)), 2);
    assert_eq!(code(&analyze(&good, "wilcoxon-V", 1, None)), 2);
}

#[test]
fn extreme_effect_rejects_at_the_first_look() {
    let dir = TempDir::new().unwrap();
    let subjects: Vec<Subject> = common::null_subjects(600, 5)
        .into_iter()
        .map(|mut s| {
            if s.arm == 1 {
                s.event *= 0.01;
            }
            s
        })
        .collect();
    let data = write_subjects(&dir, "extreme.csv", &subjects);
    for test in ["logrank", "wilcoxon-II", "rmst-I"] {
        let out = analyze(&data, test, 5, None);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["stop_look"].as_u64(), Some(1), "{test}");
    }
}

#[test]
fn sequential_replay_matches_a_single_pass() {
    let dir = TempDir::new().unwrap();
    let data = write_subjects(&dir, "null.csv", &common::null_subjects(500, 6));
    for test in ["wilcoxon-I", "wilcoxon-adjusted", "rmst-III"] {
        let state = dir.path().join(format!("{test}.state.json"));
        let mut last = None;
        for look in 1..=5 {
            let out = analyze(&data, test, look, Some(&state));
            assert_eq!(code(&out), 0, "{}", stderr(&out));
            last = Some(looks(&out));
        }
        let once = analyze(&data, test, 5, None);
        assert_eq!(last.unwrap(), looks(&once), "{test}");
    }
}

#[test]
fn repeated_analysis_is_idempotent() {
    let dir = TempDir::new().unwrap();
    let data = write_subjects(&dir, "null.csv", &common::null_subjects(400, 7));
    let state = dir.path().join("state.json");
    let first = analyze(&data, "rmst-I", 3, Some(&state));
    let saved = std::fs::read_to_string(&state).unwrap();
    let second = analyze(&data, "rmst-I", 3, Some(&state));
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(saved, std::fs::read_to_string(&state).unwrap());
    // An earlier look after a later one reports the frozen prefix.
    let earlier = analyze(&data, "rmst-I", 2, Some(&state));
    assert_eq!(looks(&earlier)[..], looks(&first)[..2]);
    assert_eq!(saved, std::fs::read_to_string(&state).unwrap());
}

#[test]
fn altered_history_is_a_state_mismatch() {
    let dir = TempDir::new().unwrap();
    let original = common::null_subjects(400, 8);
    let data = write_subjects(&dir, "a.csv", &original);
    let state = dir.path().join("state.json");
    assert_eq!(code(&analyze(&data, "logrank", 2, Some(&state))), 0);

    let mut altered = original.clone();
    for s in altered.iter_mut().filter(|s| s.entry < 0.5) {
        s.event *= 1.5;
    }
    let changed = write_subjects(&dir, "b.csv", &altered);
    let out = analyze(&changed, "logrank", 3, Some(&state));
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("differs"));

    let other = analyze(&data, "gehan-typo", 3, Some(&state));
    assert_eq!(code(&other), 2);
    let out = analyze(&data, "rmst", 3, Some(&state));
    assert_eq!(code(&out), 3);
}
