use std::fs;
use std::process::Command;

use dpview::harness::parse_json_lines;

fn dpview() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dpview"))
}

#[test]
fn no_config_prints_usage_and_exits_2() {
    let out = dpview().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "epsilon=-1\n").unwrap();
    let out = dpview().arg("--config").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = dpview().args(["--omega", "x"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = dpview().args(["--protocol", "nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let left = dir.path().join("l.csv");
    let right = dir.path().join("r.csv");
    fs::write(&left, "t,key,a\n1,1,0\n2,oops,0\n").unwrap();
    fs::write(&right, "t,key,a\n1,1,0\n").unwrap();
    let out = dpview()
        .arg(format!("--left_stream={}", left.display()))
        .arg(format!("--right_stream={}", right.display()))
        .args(["--horizon", "5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let missing = dir.path().join("none.csv");
    let out = dpview()
        .arg(format!("--left_stream={}", missing.display()))
        .arg(format!("--right_stream={}", right.display()))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn csv_streams_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let left = dir.path().join("l.csv");
    let right = dir.path().join("r.csv");
    fs::write(&left, "t,key,a\n1,1,0\n1,2,0\n3,3,0\n").unwrap();
    fs::write(&right, "t,key,a\n1,1,5\n2,2,5\n3,3,5\n4,9,5\n").unwrap();
    let metrics = dir.path().join("m.jsonl");
    let out = dpview()
        .arg(format!("--left_stream={}", left.display()))
        .arg(format!("--right_stream={}", right.display()))
        .args(["--protocol=ep", "--horizon=6", "--audit", "--out"])
        .arg(&metrics)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let records = parse_json_lines(&fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(records.len(), 6);
    assert_eq!(records.last().unwrap().true_count, 3);
    assert_eq!(records.last().unwrap().answer, 3);
}

#[test]
fn config_file_overrides_and_trials() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# small run\nprotocol=dpant\nhorizon=40\nseed=3\n").unwrap();
    let out = dpview()
        .arg("--config")
        .arg(&cfg)
        .args(["--horizon=30", "--query_interval=10", "--trials=3", "--scan-cache"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let records = parse_json_lines(&String::from_utf8(out.stdout).unwrap()).unwrap();
    let keys: Vec<(u64, u64)> = records.iter().map(|r| (r.trial, r.time)).collect();
    let expected: Vec<(u64, u64)> = (0..3).flat_map(|i| [10, 20, 30].map(|t| (i, t))).collect();
    assert_eq!(keys, expected);
}

#[test]
fn leaking_run_fails_audit() {
    let dir = tempfile::tempdir().unwrap();
    let out = dpview()
        .args(["--horizon=40", "--leak_true_count=true", "--audit", "--out"])
        .arg(dir.path().join("m.jsonl"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("kind=SyncBatch"), "{text}");
}

#[test]
fn transcript_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let out = dpview()
        .args(["--horizon=12", "--out"])
        .arg(dir.path().join("m.jsonl"))
        .arg("--transcript")
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.lines().count() > 12);
    assert!(text.lines().all(|l| l.starts_with('{')));
}
