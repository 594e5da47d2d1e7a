mod common;

use std::ffi::OsStr;
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::Arc;

use condb_client::{Client, ClientConfig, FailAt, InsertStep};

use common::{run, stdout_json, Server};

fn code(out: &std::process::Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok<S: AsRef<OsStr> + std::fmt::Debug>(args: &[S]) -> serde_json::Value {
    let out = run(args);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    stdout_json(&out)
}

#[test]
fn serve_answers_health_and_stops_cleanly_on_sigterm() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(&dir.path().join("db.sqlite"), &[]);
    let r = reqwest::blocking::get(format!("{}/healthz", server.base_url)).unwrap();
    assert_eq!(r.status().as_u16(), 200);
    let health = ok(&["admin", "--url", &server.base_url, "health"]);
    assert_eq!(health["status"], "ok");
    assert_eq!(server.terminate().code(), Some(0));
}

#[test]
fn port_in_use_is_a_network_exit() {
    let dir = tempfile::tempdir().unwrap();
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let db = dir.path().join("db.sqlite");
    let out = run(&["serve", "--bind", &addr, "--db", db.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains(&addr));
}

#[test]
fn usage_and_configuration_errors_exit_2() {
    assert_eq!(code(&run(&["serve", "--no-such-flag"])), 2);
    assert_eq!(code(&run(&["bench", "populate", "--scenario", "enormous"])), 2);
    let out = run(&["client", "--override", "missing-separator", "get-url", "t", "p", "1", "0"]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn unreachable_service_exits_3() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let out = run(&["admin", "--url", &format!("http://127.0.0.1:{port}"), "list", "tags"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn admin_commands_work_directly_on_a_database_file() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("db.sqlite");
    let db = db.to_str().unwrap();
    ok(&["admin", "--db", db, "create-tag", "gt"]);
    ok(&["admin", "--db", db, "create-type", "emcal"]);
    ok(&["admin", "--db", db, "attach-list", "gt", "emcal"]);
    let checksum = "ab".repeat(32);
    for major in ["1", "5"] {
        ok(&[
            "admin", "--db", db, "insert-iov", "gt", "emcal", "--payload-url", &format!("ab/ab/{major}"),
            "--checksum", &checksum, "--size", "3", "--major", major, "--minor", "0",
        ]);
    }
    let resolved = ok(&["admin", "--db", db, "resolve", "gt", "4", "9"]);
    assert_eq!(resolved[0]["payload_iov"]["payload_url"], "ab/ab/1");
    let iovs = ok(&["admin", "--db", db, "list", "iovs", "gt", "emcal"]);
    assert_eq!(iovs.as_array().unwrap().len(), 2);
    let desc = ok(&["admin", "--db", db, "describe", "gt"]);
    assert_eq!(desc["payload_lists"][0]["iov_count"], 2);

    // Duplicate creation is refused with the service's error code.
    let out = run(&["admin", "--db", db, "create-tag", "gt"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("global_tag_exists"));
}

#[test]
fn client_workflow_against_a_live_service() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(&dir.path().join("db.sqlite"), &[]);
    let url = server.base_url.as_str();
    let store = dir.path().join("payloads");
    let store_s = store.to_str().unwrap();
    ok(&["admin", "--url", url, "create-tag", "gt"]);
    ok(&["admin", "--url", url, "create-type", "emcal"]);
    ok(&["admin", "--url", url, "attach-list", "gt", "emcal"]);

    let file = dir.path().join("calib.bin");
    std::fs::write(&file, b"calibration constants").unwrap();
    let client = ["client", "--url", url, "--write-dir", store_s, "--read-dir", store_s];
    let with = |rest: &[&str]| -> Vec<String> { client.iter().chain(rest).map(|s| s.to_string()).collect() };

    let a = with(&["insert-payload", "gt", "emcal", "10", "0", file.to_str().unwrap()]);
    let inserted = ok(&a);
    assert_eq!(inserted["copied"], true);
    let stored_at = PathBuf::from(inserted["stored_at"].as_str().unwrap());
    assert!(stored_at.starts_with(&store));

    let a = with(&["get-url", "gt", "emcal", "12", "3"]);
    let out = run(&a);
    assert_eq!(code(&out), 0);
    assert_eq!(PathBuf::from(String::from_utf8(out.stdout).unwrap().trim()), stored_at);

    let a = with(&["fetch", "--verify", "gt", "emcal", "12", "3"]);
    let fetched = ok(&a);
    assert_eq!(fetched["verified"], true);
    assert_eq!(fetched["size"], 21);

    // Before the first IoV there is no payload.
    let a = with(&["get-url", "gt", "emcal", "9", "0"]);
    assert_eq!(code(&run(&a)), 1);

    // An override answers without asking the service.
    let a = with(&["--override", "emcal=/opt/local.bin", "get-url", "gt", "emcal", "1", "0"]);
    let out = run(&a);
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "/opt/local.bin");

    // Corruption is a failed check.
    std::fs::write(&stored_at, b"tampered").unwrap();
    let a = with(&["fetch", "--verify", "gt", "emcal", "12", "3"]);
    assert_eq!(code(&run(&a)), 4);

    ok(&["admin", "--url", url, "lock", "gt"]);
    let a = with(&["insert-payload", "gt", "emcal", "20", "0", file.to_str().unwrap()]);
    let out = run(&a);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("global_tag_locked"));
}

#[test]
fn audit_orphans_lists_exactly_the_failed_insertion() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(&dir.path().join("db.sqlite"), &[]);
    let url = server.base_url.as_str();
    let store = dir.path().join("payloads");
    let store_s = store.to_str().unwrap();
    ok(&["admin", "--url", url, "create-tag", "gt"]);
    ok(&["admin", "--url", url, "create-type", "emcal"]);
    ok(&["admin", "--url", url, "attach-list", "gt", "emcal"]);

    let audit = || ok(&["client", "--url", url, "audit-orphans", "--prefix", store_s]);
    let report = audit();
    assert_eq!(report["orphans"], serde_json::json!([]));
    assert_eq!(report["dangling"], serde_json::json!([]));

    let good = dir.path().join("good.bin");
    std::fs::write(&good, b"kept").unwrap();
    ok(&["client", "--url", url, "--write-dir", store_s, "insert-payload", "gt", "emcal", "1", "0", good.to_str().unwrap()]);

    let config = ClientConfig {
        base_url: url.to_owned(),
        write_dir_prefixes: vec![store.clone()],
        ..ClientConfig::default()
    };
    let client = Client::new(config).unwrap().with_fault_injector(Arc::new(FailAt(InsertStep::AfterCopy)));
    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, b"never registered").unwrap();
    assert!(client.insert_payload("gt", "emcal", 2, 0, &bad).is_err());

    let report = audit();
    let orphans = report["orphans"].as_array().unwrap();
    assert_eq!(orphans.len(), 1, "{report}");
    assert_eq!(orphans[0]["size_bytes"], 16);
    assert_eq!(report["dangling"], serde_json::json!([]));
    assert_eq!(report["scanned_files"], 2);

    // A metadata row whose file vanished is a failed check.
    let kept = ok(&["client", "--url", url, "--read-dir", store_s, "fetch", "gt", "emcal", "1", "0"]);
    std::fs::remove_file(kept["path"].as_str().unwrap()).unwrap();
    let out = run(&["client", "--url", url, "audit-orphans", "--prefix", store_s]);
    assert_eq!(code(&out), 4);
    assert_eq!(stdout_json(&out)["dangling"].as_array().unwrap().len(), 1);
}

#[test]
fn bench_populate_and_campaign_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("db.sqlite");
    let report = ok(&["bench", "populate", "--scenario", "tiny", "--seed", "3", "--db", db.to_str().unwrap()]);
    assert_eq!(report["inserted_iovs"], 100);
    // Populating again is a no-op.
    let again = ok(&["bench", "populate", "--scenario", "tiny", "--seed", "3", "--db", db.to_str().unwrap()]);
    assert_eq!(again["inserted_iovs"], 0);

    let server = Server::start(&db, &["--benchmark-mode"]);
    let out_dir = dir.path().join("out");
    let result = ok(&[
        "bench", "campaign", "--scenario", "tiny", "--seed", "3", "--url", &server.base_url, "--requests", "200",
        "--depth", "8", "--strategy", "naive", "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(result["summary"]["n_records"], 200);
    assert_eq!(result["summary"]["success_count"], 200);
    assert_eq!(result["config"]["seed"], 3);
    for f in ["records.jsonl", "summary.json", "histogram.csv", "per_second.csv"] {
        assert!(out_dir.join(f).is_file(), "{f}");
    }
    let lines = std::fs::read_to_string(out_dir.join("records.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 200);

    let scaling_dir = dir.path().join("scaling");
    let rows = ok(&[
        "bench", "scaling", "--url", &server.base_url, "--scenarios", "tiny", "--seed", "3", "--requests", "100",
        "--depth", "4", "--out", scaling_dir.to_str().unwrap(),
    ]);
    assert_eq!(rows.as_array().unwrap().len(), 2);
    assert!(scaling_dir.join("scaling.csv").is_file());
}
