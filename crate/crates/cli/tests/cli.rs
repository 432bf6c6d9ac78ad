use std::path::Path;
use std::process::{Command, Output};

fn cba(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cba"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_records_an_archive_that_replays() {
    let dir = tempfile::tempdir().unwrap();
    let o = cba(
        &["run", "--regime", "cba", "--seed", "3", "--max-timesteps", "300", "--record", "--out", "r"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("cba: completed="));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r/report.json")).unwrap()).unwrap();
    assert_eq!(report["regime"], "cba");
    assert_eq!(report["seeds"]["world"], 3);

    let o = cba(&["replay", "r/session.jsonl"], dir.path());
    assert!(o.status.success(), "{}", stdout(&o));
    let replayed: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(replayed["divergence"].is_null());
}

#[test]
fn tampered_archive_fails_replay() {
    let dir = tempfile::tempdir().unwrap();
    let o = cba(
        &["run", "--regime", "ce_m", "--max-timesteps", "200", "--record", "--out", "r"],
        dir.path(),
    );
    assert!(o.status.success());
    let path = dir.path().join("r/session.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    // flip one recorded teacher answer
    let tampered = text.replacen("\"polls\":[\"left\"]", "\"polls\":[\"right\"]", 1);
    assert_ne!(tampered, text, "archive should hold a left demonstration");
    std::fs::write(&path, tampered).unwrap();
    let o = cba(&["replay", "r/session.jsonl"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_prints_one_row_per_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let o = cba(
        &["sweep", "--grid", "0.3,0.9", "--max-timesteps", "150", "--out", "s"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 4, "{out}");
    assert!(lines[1].starts_with("0.3,"));
    assert!(lines[2].starts_with("0.9,"));
    assert!(lines[3].starts_with("best "));
    assert!(dir.path().join("s/sweep.json").exists());
}

#[test]
fn calibrate_writes_a_loadable_pattern() {
    let dir = tempfile::tempdir().unwrap();
    let o = cba(
        &["calibrate-traffic", "--target", "0.3", "--timesteps", "2000", "--out", "p.json"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("p.json")).unwrap();
    let p = cba::world::TrafficPattern::from_json(&text).unwrap();
    assert!(p.lane_rates[1] > 0.0);
}

#[test]
fn bad_input_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = cba(&["run", "--regime", "fastest"], dir.path());
    assert!(!o.status.success());
    let o = cba(&["replay", "missing.jsonl"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}
