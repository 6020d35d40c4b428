use std::process::Command;

use serde_json::Value;

fn semgate() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_semgate"));
    c.env_remove("SEMGATE_CONFIG").env("RUST_LOG", "off");
    c
}

#[test]
fn fuzz_finds_the_defect_and_exits_nonzero() {
    let out = semgate().args(["fuzz", "--buggy", "--seed", "42", "--json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let tools: Vec<&str> = report["violations"][0]["sequence"]["steps"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["tool"].as_str().unwrap())
        .collect();
    assert_eq!(tools, ["create_document", "initiate_share", "accept_sharing_request", "accept_sharing_request"]);
}

#[test]
fn fuzz_on_the_fixed_graph_is_clean() {
    let out = semgate().args(["fuzz", "--seed", "7", "--strategy", "uniform"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = String::from_utf8(out.stdout).unwrap();
    assert!(log.contains("No invariant violations"), "{log}");
}

#[test]
fn unknown_strategy_is_reported() {
    let out = semgate().args(["fuzz", "--strategy", "annealing"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("guided"));
}

#[test]
fn export_epa_writes_dot() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.dot");
    let out = semgate().args(["export-epa", "--buggy", "-o"]).arg(&path).output().unwrap();
    assert!(out.status.success());
    let dot = std::fs::read_to_string(&path).unwrap();
    assert!(dot.starts_with("digraph"));
    assert!(dot.contains("color=gold"));
}

#[test]
fn verify_ledger_reports_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.jsonl");
    let cfg = dir.path().join("semgate.toml");
    std::fs::write(&cfg, "[paths]\nledger = \"audit.jsonl\"\n").unwrap();
    let config = semgate_server::config::Config::load(&cfg).unwrap();
    let gateway = config.build_gateway().unwrap();
    for intent in ["Read document D-8821", "List my documents", "Search documents for budget"] {
        let who = gateway.identity("U-2").unwrap();
        gateway.handle_intent(semgate_core::gateway::IntentRequest::new(intent, who)).unwrap();
    }
    drop(gateway);

    let out = semgate().arg("verify-ledger").arg(&path).output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "valid (3 records)");

    let text = std::fs::read_to_string(&path).unwrap().replacen("List my documents", "List my docunents", 1);
    std::fs::write(&path, text).unwrap();
    let out = semgate().arg("verify-ledger").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "broken at seq 1 (3 records)");
}
