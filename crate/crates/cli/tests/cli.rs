//! End-to-end checks of the `flairr` binary against scripted fixtures.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn flairr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flairr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data() -> String {
    fixture("etth1_sample.csv").display().to_string()
}

fn script(name: &str) -> String {
    fixture(name).display().to_string()
}

#[test]
fn forecast_prints_a_parsed_reply() {
    let o = flairr(&[
        "forecast",
        "--data",
        &data(),
        "--target",
        "OT",
        "--script",
        &script("pattern_h24.jsonl"),
        "--script-mode",
        "pattern",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let line = out
        .lines()
        .find(|l| l.starts_with("Predicted Values: ["))
        .expect("values line");
    assert_eq!(line.matches(',').count(), 23);
    assert!(out.contains("Reasoning: Level held flat."));
}

#[test]
fn unknown_strategy_is_a_config_error() {
    let o = flairr(&[
        "forecast",
        "--data",
        &data(),
        "--target",
        "OT",
        "--script",
        &script("pattern_h24.jsonl"),
        "--script-mode",
        "pattern",
        "--strategy",
        "no-such-strategy",
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("no-such-strategy"));
    assert!(err.contains("deep-stl"), "available strategies are listed: {err}");
}

#[test]
fn missing_target_column_is_a_data_error() {
    let o = flairr(&[
        "forecast",
        "--data",
        &data(),
        "--target",
        "NOPE",
        "--script",
        &script("pattern_h24.jsonl"),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn exhausted_script_is_a_backend_error() {
    let out = tempfile::tempdir().unwrap();
    let o = flairr(&[
        "refine",
        "--data",
        &data(),
        "--target",
        "OT",
        "--script",
        &script("exhausted.jsonl"),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("exhausted"));
}

#[test]
fn refine_stops_when_refiner_is_done() {
    let out = tempfile::tempdir().unwrap();
    let o = flairr(&[
        "refine",
        "--data",
        &data(),
        "--target",
        "OT",
        "--script",
        &script("refine_done_at_2.jsonl"),
        "--script-mode",
        "pattern",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("early_stop: true"), "{text}");
    assert!(text.contains("iterations: 2"), "{text}");
    assert!(text.contains("Anchor each step on the value 24 steps earlier."));
    let log = std::fs::read_to_string(out.path().join("session.jsonl")).unwrap();
    let kinds: Vec<String> = log
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["type"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    assert_eq!(kinds, ["iteration", "iteration", "summary"]);
}

#[test]
fn refine_falls_back_to_best_iteration() {
    let out = tempfile::tempdir().unwrap();
    let o = flairr(&[
        "refine",
        "--data",
        &data(),
        "--target",
        "OT",
        "--script",
        &script("refine_never_done.jsonl"),
        "--script-mode",
        "pattern",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("early_stop: false"), "{text}");
    assert!(text.contains("iterations: 5"), "{text}");
    assert!(text.contains("best_iteration: 2"), "{text}");
    assert!(text.contains("Anchor each step"), "{text}");
}

#[test]
fn max_iter_one_runs_a_single_iteration() {
    let out = tempfile::tempdir().unwrap();
    let o = flairr(&[
        "refine",
        "--data",
        &data(),
        "--target",
        "OT",
        "--script",
        &script("pattern_h24.jsonl"),
        "--script-mode",
        "pattern",
        "--max-iter",
        "1",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("iterations: 1"), "{}", stdout(&o));
}

#[test]
fn retrieve_lists_at_most_m_analogs() {
    let o = flairr(&["retrieve", "--data", &data(), "--target", "OT", "--m", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("rank,start,score,context,outcome"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("1,"));
    let s0: f64 = rows[0].split(',').nth(2).unwrap().parse().unwrap();
    let s1: f64 = rows[1].split(',').nth(2).unwrap().parse().unwrap();
    assert!(s0 >= s1);
}

fn bench_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("bench.json");
    std::fs::write(
        &path,
        format!(
            r#"{{
  "dataset": {{"path": "{}", "target": "OT", "name": "ETTh1-sample"}},
  "horizons": [24],
  "session": {{"seed": 7}},
  "max_test_windows": 4,
  "output": "{}",
  "backend": {{"kind": "scripted", "script": "{}", "script_mode": "pattern"}}{extra}
}}"#,
            data(),
            dir.join("runs").display(),
            script("pattern_h24.jsonl"),
        ),
    )
    .unwrap();
    path
}

#[test]
fn ablate_prints_four_conditions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bench_config(dir.path(), r#", "runs": 2"#);
    let o = flairr(&["ablate", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for label in ["Simple", "Simple+Retrieval", "Simple+IR", "FLAIRR"] {
        assert!(text.lines().any(|l| l.contains(label)), "{label} missing: {text}");
    }
    assert!(text.contains("report: "));
}

#[test]
fn bench_report_has_one_column_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bench_config(dir.path(), r#", "methods": ["simple", "flairr"]"#);
    let o = flairr(&["bench", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("report: "))
        .map(PathBuf::from)
        .expect("report path");
    let csv = std::fs::read_to_string(&report).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert_eq!(header.iter().filter(|h| h.starts_with("run_")).count(), 5, "{header:?}");
    assert_eq!(csv.lines().count(), 3);
    let run_dir = report.parent().unwrap();
    assert!(run_dir.join("config.json").exists());
    assert!(run_dir.join("report.json").exists());
    assert_eq!(std::fs::read_dir(run_dir.join("sessions")).unwrap().count(), 10);
}
