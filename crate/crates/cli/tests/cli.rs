use std::path::PathBuf;
use std::process::{Command, Output};

fn refshare(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refshare"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scenario(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"))
        .display()
        .to_string()
}

#[test]
fn passing_scenario_exits_zero() {
    let out = refshare(&["run", &scenario("honest_three")]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("result: PASS"), "{text}");
    assert!(text.contains("M7"));
}

#[test]
fn failing_expectation_exits_one() {
    let out = refshare(&["run", &scenario("collusion_n_minus_k_plus_one")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stdout).unwrap().contains("[FAIL]"));
}

#[test]
fn machine_report_is_json_and_written_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let out = refshare(&[
        "run",
        &scenario("forge_output"),
        "--format",
        "machine",
        "--report",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["cheaters"][0]["outcome"], "disconnected");
    let on_disk: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(on_disk, v);
}

#[test]
fn seed_override_changes_the_run() {
    let a = refshare(&["run", &scenario("honest_three"), "--format", "machine"]);
    let b = refshare(&["run", &scenario("honest_three"), "--format", "machine", "--seed", "99"]);
    let a: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    let b: serde_json::Value = serde_json::from_slice(&b.stdout).unwrap();
    assert_eq!(b["seed"], 99);
    assert_ne!(a["reconstructions"]["instances"], b["reconstructions"]["instances"]);
}

#[test]
fn invalid_scenario_reports_line_and_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "seed = 1\n\n[[players]]\nlatency_ms = 10\n\n[[players]]\n").unwrap();
    let out = refshare(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 3"), "{err}");

    std::fs::write(&path, "seed = 1\nunknown_key = true\n").unwrap();
    let out = refshare(&["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("line 2"));
}

#[test]
fn validate_accepts_every_shipped_scenario() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let out = refshare(&["validate", path.to_str().unwrap()]);
        assert!(out.status.success(), "{}", path.display());
    }
}

#[test]
fn profile_messages_lists_m1_to_m9() {
    let out = refshare(&["profile-messages"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for m in 1..=9 {
        assert!(text.contains(&format!("M{m}")), "{text}");
    }
}
