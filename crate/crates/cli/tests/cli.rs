use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
        .display()
        .to_string()
}

fn quadpool(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadpool")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn bug1_fails_with_schedule_and_passes_when_fixed() {
    let sc = fixture("bug1.json");
    let on = quadpool(&["run", "--scenario", &sc, "--mode", "exhaustive", "--depth", "400"]);
    assert_eq!(on.status.code(), Some(1), "{}", stdout(&on));
    let text = stdout(&on);
    assert!(text.contains("[postcondition]"), "{text}");
    assert!(text.contains("schedule: schedule:"), "{text}");

    let off = quadpool(&["run", "--scenario", &sc, "--mode", "exhaustive", "--depth", "400", "--bugs", "none"]);
    assert_eq!(off.status.code(), Some(0), "{}", stdout(&off));
    assert!(stdout(&off).contains("no violations"));
}

#[test]
fn replay_reproduces_recorded_run() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.log");
    let first = dir.path().join("first.json");
    let second = dir.path().join("second.json");
    let sc = fixture("bug2.json");
    let p = |x: &PathBuf| x.display().to_string();

    let rec = quadpool(&[
        "run", "--scenario", &sc, "--mode", "random", "--seed", "3",
        "--trace-out", &p(&trace), "--report-out", &p(&first),
    ]);
    assert!(rec.status.code().is_some_and(|c| c < 3), "{}", String::from_utf8_lossy(&rec.stderr));
    let rep = quadpool(&["run", "--scenario", &sc, "--mode", "replay", "--trace", &p(&trace), "--report-out", &p(&second)]);
    assert_eq!(rep.status.code(), rec.status.code());

    let load = |f: &PathBuf| -> serde_json::Value { serde_json::from_str(&std::fs::read_to_string(f).unwrap()).unwrap() };
    let (a, b) = (load(&first), load(&second));
    for key in ["violations", "violation_counts", "events", "exit_code", "scenario_digest"] {
        assert_eq!(a[key], b[key], "{key}");
    }
}

#[test]
fn reports_are_deterministic() {
    let sc = fixture("termination.json");
    let a = quadpool(&["run", "--scenario", &sc, "--mode", "random", "--seed", "11"]);
    let b = quadpool(&["run", "--scenario", &sc, "--mode", "random", "--seed", "11"]);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.status.code(), Some(0));
}

#[test]
fn bug3_nontermination_exit_code() {
    let sc = fixture("bug3.json");
    let on = quadpool(&["run", "--scenario", &sc]);
    assert_eq!(on.status.code(), Some(1));
    assert!(stdout(&on).contains("NONTERMINATION"));
    let off = quadpool(&["run", "--scenario", &sc, "--bugs", "none"]);
    assert_eq!(off.status.code(), Some(0));
    assert!(stdout(&off).contains("Esizeerr"));
}

#[test]
fn exhausted_bound_and_errors_have_own_codes() {
    let sc = fixture("safety.json");
    let cut = quadpool(&["run", "--scenario", &sc, "--depth", "5"]);
    assert_eq!(cut.status.code(), Some(2), "{}", stdout(&cut));

    let bad = quadpool(&["run", "--scenario", &fixture("invalid/dangling_free.json")]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("threads[0].script[0].alloc_index"));

    let missing = quadpool(&["run", "--scenario", "/nonexistent.json"]);
    assert_eq!(missing.status.code(), Some(3));

    let no_trace = quadpool(&["run", "--scenario", &sc, "--mode", "replay"]);
    assert_eq!(no_trace.status.code(), Some(3));
}

#[test]
fn check_selection_limits_findings() {
    let sc = fixture("bug2.json");
    let only = quadpool(&["run", "--scenario", &sc, "--check", "invariants,mem_part"]);
    assert_eq!(only.status.code(), Some(0), "{}", stdout(&only));
    assert!(stdout(&only).contains("checks invariants,mem_part"));
    let post = quadpool(&["run", "--scenario", &sc, "--check", "postconditions", "--fail-fast"]);
    assert_eq!(post.status.code(), Some(1));
}

#[test]
fn check_prints_normalised_scenario() {
    let out = quadpool(&["check", "--scenario", &fixture("safety.json")]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["pools"][0]["buf"], 0);
    assert_eq!(v["checks"].as_array().unwrap().len(), 7);
}
