use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn cis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cis")).args(args).env_remove("RUST_LOG").output().expect("cis runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn golden(name: &str) -> f64 {
    read_json(&fixture("golden.json"))[name]["optimal_value"].as_f64().unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_exit_codes() {
    for name in ["delayed_sharing_2x2.json", "static_team.json", "periodic_sharing.json", "discounted.json"] {
        let out = cis(&["validate", path_str(&fixture(name))]);
        assert_eq!(code(&out), 0, "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }

    let out = cis(&["validate", path_str(&fixture("bad_kernel_row.json"))]);
    assert_eq!(code(&out), 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("(t=0, x=1, u=1)"), "{stderr}");
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(!report["violations"].as_array().unwrap().is_empty());

    for name in ["overlap_protocol.json", "control_sharing_discounted.json"] {
        assert_eq!(code(&cis(&["validate", path_str(&fixture(name))])), 1, "{name}");
    }

    let out = cis(&["validate", path_str(&fixture("malformed.json"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3, column 10"));

    assert_eq!(code(&cis(&["validate", "/nonexistent/problem.json"])), 2);
}

#[test]
fn solve_reports_the_golden_value() {
    let dir = tempfile::tempdir().unwrap();
    let policy = dir.path().join("policy.json");
    let out = cis(&["solve", path_str(&fixture("delayed_sharing_2x2.json")), "-o", path_str(&policy)]);
    assert_eq!(code(&out), 0);
    let file = read_json(&policy);
    assert_eq!(file["format"], "cis-policy/1");
    assert_eq!(file["policy"]["kind"], "tree");
    let value = file["report"]["optimal_value"].as_f64().unwrap();
    assert!((value - golden("delayed_sharing_2x2")).abs() <= 1e-9);

    let out = cis(&["solve", path_str(&fixture("constant_cost.json")), "-o", path_str(&policy)]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "J* = 2.25000000000");
}

#[test]
fn reduced_variant_gives_the_same_value() {
    let out = cis(&["solve", path_str(&fixture("periodic_sharing.json")), "--variant", "reduced"]);
    assert_eq!(code(&out), 0);
    let file: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(file["report"]["representation"], "reduced");
    let value = file["report"]["optimal_value"].as_f64().unwrap();
    assert!((value - golden("periodic_sharing")).abs() <= 1e-9);
}

#[test]
fn zero_discount_equals_one_step() {
    let value = |name: &str| {
        let out = cis(&["solve", path_str(&fixture(name))]);
        assert_eq!(code(&out), 0);
        let file: Value = serde_json::from_slice(&out.stdout).unwrap();
        file["report"]["optimal_value"].as_f64().unwrap()
    };
    let discounted = value("discounted_zero.json");
    assert!((discounted - value("discounted_zero_as_finite.json")).abs() <= 1e-12);
}

#[test]
fn caps_exit_with_code_three() {
    let out = cis(&["solve", path_str(&fixture("delayed_sharing_2x2.json")), "--cap-prescriptions", "10"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds cap"));
    assert_eq!(code(&cis(&["enumerate", path_str(&fixture("static_team.json")), "--cap-strategies", "100"])), 3);
}

#[test]
fn bad_arguments_are_rejected() {
    let input = fixture("discounted.json");
    assert_ne!(code(&cis(&["solve", path_str(&input), "--epsilon", "0"])), 0);
    assert_ne!(code(&cis(&["solve", path_str(&input), "--variant", "sparse"])), 0);
}

#[test]
fn enumerate_counts() {
    let out = cis(&["enumerate", path_str(&fixture("static_team.json"))]);
    assert_eq!(code(&out), 0);
    let file: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(file["agree"], true);
    assert_eq!(file["basic"]["count"], 256);
    assert_eq!(file["coordinator"]["count"], 32);
    let min = file["basic"]["min_cost"].as_f64().unwrap();
    assert!((min - golden("static_team")).abs() <= 1e-12);

    let out = cis(&["enumerate", path_str(&fixture("singleton.json"))]);
    let file: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!((file["basic"]["count"].as_u64(), file["coordinator"]["count"].as_u64()), (Some(3), Some(3)));
}

#[test]
fn simulate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture("delayed_sharing_2x2.json");
    let policy = dir.path().join("policy.json");
    assert_eq!(code(&cis(&["solve", path_str(&input), "-o", path_str(&policy)])), 0);

    let run = |name: &str, extra: &[&str]| {
        let out_path = dir.path().join(name);
        let mut args = vec!["simulate", path_str(&input), "--policy", path_str(&policy), "-o", path_str(&out_path)];
        args.extend_from_slice(&["--seed", "11", "--episodes", "20000"]);
        args.extend_from_slice(extra);
        let out = cis(&args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(&out_path).unwrap()
    };
    let a = run("a.json", &[]);
    assert_eq!(a, run("b.json", &[]));

    let report: Value = serde_json::from_slice(&a).unwrap();
    let (mean, stderr) = (report["report"]["mean"].as_f64().unwrap(), report["report"]["stderr"].as_f64().unwrap());
    assert!((mean - golden("delayed_sharing_2x2")).abs() <= 4.0 * stderr);
    assert_eq!(report["report"]["audit_violations"], 0);

    // the basic executor sees the same draws
    let basic: Value = serde_json::from_slice(&run("c.json", &["--executor", "basic"])).unwrap();
    assert_eq!(basic["report"], report["report"]);

    let runs = dir.path().join("runs.jsonl");
    run("d.json", &["--trajectories", path_str(&runs)]);
    let text = std::fs::read_to_string(&runs).unwrap();
    assert_eq!(text.lines().count(), 20000);
}

#[test]
fn simulate_rejects_a_policy_for_another_problem() {
    let dir = tempfile::tempdir().unwrap();
    let policy = dir.path().join("policy.json");
    assert_eq!(code(&cis(&["solve", path_str(&fixture("delayed_sharing_2x2.json")), "-o", path_str(&policy)])), 0);
    let out = cis(&["simulate", path_str(&fixture("static_team.json")), "--policy", path_str(&policy)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("different problem"));

    std::fs::write(&policy, "{ not json").unwrap();
    let out = cis(&["simulate", path_str(&fixture("delayed_sharing_2x2.json")), "--policy", path_str(&policy)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn discounted_policies_simulate_with_the_coordinator_only() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture("discounted.json");
    let policy = dir.path().join("policy.json");
    assert_eq!(code(&cis(&["solve", path_str(&input), "-o", path_str(&policy)])), 0);
    assert_eq!(read_json(&policy)["policy"]["kind"], "stationary");
    let args = ["simulate", path_str(&input), "--policy", path_str(&policy), "--episodes", "200"];
    assert_eq!(code(&cis(&args)), 0);
    let mut basic = args.to_vec();
    basic.extend_from_slice(&["--executor", "basic"]);
    assert_eq!(code(&cis(&basic)), 1);
}
