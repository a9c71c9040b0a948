//! End-to-end tests of the command-line contract: exit codes, overwrite
//! protection, and the bundled sample scenarios.

use std::fs;
use std::process::Command;

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_papertrust"))
}

fn example(name: &str) -> String {
    format!("{}/examples/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn write_config(dir: &std::path::Path, name: &str, value: &Value) -> String {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn malformed_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    fs::write(&path, "{ not json").unwrap();
    let output = bin()
        .args(["metrics", "--config", path.to_str().unwrap(), "--out"])
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("config error"));
}

#[test]
fn missing_config_file_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let output = bin()
        .args(["gen", "--config", "/nonexistent/x.json", "--out"])
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn single_surface_population_exits_2_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "k1.json",
        &serde_json::json!({
            "schema_version": 1, "seed": 1, "surfaces": 1, "trials": 2, "noise_rel": 0.0,
        }),
    );
    let output = bin()
        .args(["metrics", "--config", &config, "--out"])
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("too small"));
}

#[test]
fn unknown_attack_name_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "bad-attack.json",
        &serde_json::json!({
            "schema_version": 1, "seed": 1, "seeds": 1, "attacks": ["surrogate_model"],
        }),
    );
    let output = bin()
        .args(["attack", "--config", &config, "--out"])
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("surrogate_model"));
}

#[test]
fn rerun_without_force_exits_2_and_with_force_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let run = |force: bool| {
        let mut cmd = bin();
        cmd.args(["gen", "--config", &example("gen-demo.json"), "--out", out.to_str().unwrap()]);
        if force {
            cmd.arg("--force");
        }
        cmd.output().unwrap()
    };
    assert_eq!(run(false).status.code(), Some(0));
    let second = run(false);
    assert_eq!(second.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&second.stderr).contains("--force"));
    assert_eq!(run(true).status.code(), Some(0));
}

#[test]
fn single_replay_cell_reports_success() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "replay-only.json",
        &serde_json::json!({
            "schema_version": 1, "seed": 3, "seeds": 1, "attacks": ["replay"],
        }),
    );
    let out = tmp.path().join("out");
    let status = bin()
        .args(["attack", "--config", &config, "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let csv = fs::read_to_string(out.join("attack_matrix.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "attack,mitigation,mitigated,seed,success,queries_used,notes"
    );
    let unmitigated: Vec<&str> = csv.lines().filter(|l| l.contains(",false,3,")).collect();
    assert!(unmitigated[0].contains("replay,nonces,false,3,true"));
}

#[test]
fn metrics_outputs_land_in_expected_band() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "small-metrics.json",
        &serde_json::json!({
            "schema_version": 1, "seed": 9, "surfaces": 8, "trials": 2, "noise_rel": 0.01,
            "surface": {"width": 32, "height": 32, "correlation_length": 3.0, "slope_scale": 0.2},
        }),
    );
    let out = tmp.path().join("out");
    let status = bin()
        .args(["metrics", "--config", &config, "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics_summary.json")).unwrap())
            .unwrap();
    let uniqueness = summary["uniqueness"]["mean_over_trials"].as_f64().unwrap();
    assert!((0.4..=0.6).contains(&uniqueness), "uniqueness {uniqueness}");
    assert!(summary["robustness"]["min"].as_f64().unwrap() > 0.9);
    let scores = fs::read_to_string(out.join("scores.csv")).unwrap();
    assert!(scores.starts_with("score,label"));
    assert_eq!(scores.lines().count(), 1 + 8 * 2 + 2 * (8 * 7 / 2));
}

#[test]
fn auction_house_sample_completes_with_zero_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let status = bin()
        .args(["scenario", "--config", &example("auction-house.json"), "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let report: Value =
        serde_json::from_str(&fs::read_to_string(out.join("scenario_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["flag_events"], 0);
    assert_eq!(report["archetype"], "client_server");
    assert!(report["chains_verify"].as_bool().unwrap());
    for (_, history) in report["per_product"].as_object().unwrap() {
        assert!(history["authentications"].as_array().unwrap().iter().all(|a| a == true));
    }
}

#[test]
fn ecommerce_p2p_sample_has_exactly_one_flag_event_in_ledger() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let status = bin()
        .args(["scenario", "--config", &example("ecommerce-p2p.json"), "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let ledger: Value =
        serde_json::from_str(&fs::read_to_string(out.join("ledger.json")).unwrap()).unwrap();
    let flags: usize = ledger
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|b| b["transactions"].as_array().unwrap())
        .filter(|tx| tx["kind"] == "flag")
        .count();
    assert_eq!(flags, 1, "exactly one flag event expected in the ledger");
    let report: Value =
        serde_json::from_str(&fs::read_to_string(out.join("scenario_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["per_product"]["sneaker-box-03"]["flagged"], true);
}

#[test]
fn semiconductor_hybrid_sample_labels_regions() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let status = bin()
        .args([
            "scenario",
            "--config",
            &example("semiconductor-hybrid.json"),
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let events = fs::read_to_string(out.join("events.csv")).unwrap();
    assert!(events.contains("client_server_verify"), "trusted hops use the server flow");
    assert!(events.contains("p2p_local_verify"), "untrusted hops verify locally");
}

#[test]
fn worker_count_does_not_change_attack_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "two-attacks.json",
        &serde_json::json!({
            "schema_version": 1, "seed": 4, "seeds": 2,
            "attacks": ["replay", "template_leakage"],
        }),
    );
    let mut outputs = Vec::new();
    for workers in ["1", "4"] {
        let out = tmp.path().join(format!("out-{workers}"));
        let status = bin()
            .args([
                "attack", "--config", &config, "--out", out.to_str().unwrap(),
                "--workers", workers,
            ])
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(fs::read(out.join("attack_matrix.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}
