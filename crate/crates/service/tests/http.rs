use std::sync::Arc;

use reqwest::blocking::Client;
use serde_json::{json, Value};

use condb_core::api::{ApiPolicy, HealthDocument};
use condb_core::{ConditionsStore, ResolutionStrategy, SqliteStore};
use condb_service::{BackgroundServer, ServiceOptions};

struct Fixture {
    server: BackgroundServer,
    http: Client,
    dir: tempfile::TempDir,
}

fn fixture(options: ServiceOptions) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let store = SqliteStore::open(dir.path().join("db.sqlite"), 4).unwrap();
    store.migrate().unwrap();
    let server = BackgroundServer::start(Arc::new(store), options).unwrap();
    Fixture {
        server,
        http: Client::new(),
        dir,
    }
}

impl Fixture {
    fn url(&self, path: &str) -> String {
        format!("{}{}", self.server.base_url(), path)
    }

    fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let r = self.http.post(self.url(path)).json(&body).send().unwrap();
        (r.status().as_u16(), r.json().unwrap())
    }

    fn get(&self, path: &str) -> (u16, Value) {
        let r = self.http.get(self.url(path)).send().unwrap();
        (r.status().as_u16(), r.json().unwrap())
    }

    fn get_raw(&self, path: &str) -> (u16, Vec<u8>) {
        let r = self.http.get(self.url(path)).send().unwrap();
        (r.status().as_u16(), r.bytes().unwrap().to_vec())
    }

    fn put(&self, path: &str, body: Value) -> (u16, Value) {
        let r = self.http.put(self.url(path)).json(&body).send().unwrap();
        (r.status().as_u16(), r.json().unwrap())
    }

    fn populate(&self) {
        assert_eq!(self.post("/api/globalTags", json!({"name": "gt"})).0, 201);
        assert_eq!(self.post("/api/payloadTypes", json!({"name": "emcal"})).0, 201);
        assert_eq!(
            self.post("/api/payloadLists", json!({"global_tag": "gt", "payload_type": "emcal"})).0,
            201
        );
    }

    fn insert(&self, major: u64) -> (u16, Value) {
        self.post(
            "/api/payloadIOVs",
            json!({
                "global_tag": "gt", "payload_type": "emcal",
                "payload_url": format!("ab/cd/{major}"), "checksum": "ab".repeat(32),
                "size": 10, "major_iov": major, "minor_iov": 0
            }),
        )
    }
}

#[test]
fn catalog_and_resolution_routes() {
    let f = fixture(ServiceOptions::default());
    assert_eq!(f.get("/api/globalTags"), (200, json!([])));
    f.populate();

    let (status, body) = f.get("/api/payloadIOVs?gtName=gt&majorIOV=7&minorIOV=3");
    assert_eq!((status, body), (200, json!([])));

    for m in [10, 1, 5] {
        assert_eq!(f.insert(m).0, 201);
    }
    let (status, body) = f.get("/api/payloadIOVs?gtName=gt&majorIOV=7&minorIOV=3");
    assert_eq!(status, 200);
    let arr = body.as_array().unwrap();
    assert_eq!(arr.len(), 1);
    assert_eq!(arr[0]["payload_type"], "emcal");
    assert_eq!(arr[0]["payload_iov"]["major_iov"], 5);
    assert_eq!(arr[0]["payload_iov"]["payload_url"], "ab/cd/5");

    let (status, desc) = f.get("/api/globalTags/gt");
    assert_eq!(status, 200);
    assert_eq!(desc["payload_lists"][0]["iov_count"], 3);
    assert_eq!(f.get("/api/payloadTypes").1, json!([{"name": "emcal"}]));
    assert_eq!(f.get("/api/payloadUrls").1, json!(["ab/cd/1", "ab/cd/10", "ab/cd/5"]));
    let (_, iovs) = f.get("/api/globalTags/gt/payloadIOVs/emcal");
    assert_eq!(iovs.as_array().unwrap().len(), 3);

    // Identical reads return identical bodies.
    let a = f.get_raw("/api/payloadIOVs?gtName=gt&majorIOV=100&minorIOV=0");
    let b = f.get_raw("/api/payloadIOVs?gtName=gt&majorIOV=100&minorIOV=0");
    assert_eq!(a, b);
}

#[test]
fn error_statuses() {
    let f = fixture(ServiceOptions::default());
    f.populate();
    let code = |v: &Value| v["code"].as_str().unwrap().to_owned();

    let (s, b) = f.get("/api/payloadIOVs?gtName=nope&majorIOV=1&minorIOV=1");
    assert_eq!((s, code(&b).as_str()), (404, "global_tag_not_found"));
    let (s, b) = f.get("/api/payloadIOVs?gtName=gt&majorIOV=abc&minorIOV=1");
    assert_eq!((s, code(&b).as_str()), (400, "invalid_iov"));
    let (s, b) = f.get("/api/payloadIOVs?gtName=gt&majorIOV=4294967296&minorIOV=1");
    assert_eq!((s, code(&b).as_str()), (400, "invalid_iov"));
    let (s, b) = f.post("/api/globalTags", json!({"name": "gt"}));
    assert_eq!((s, code(&b).as_str()), (409, "global_tag_exists"));
    let (s, b) = f.post("/api/globalTags", json!({"name": "bad/name"}));
    assert_eq!((s, code(&b).as_str()), (400, "invalid_name"));
    let (s, b) = f.post("/api/globalTags", json!({"wrong": 1}));
    assert_eq!((s, code(&b).as_str()), (400, "bad_request"));
    assert_eq!(f.insert(3).0, 201);
    let (s, b) = f.insert(3);
    assert_eq!((s, code(&b).as_str()), (409, "duplicate_iov_start"));

    let (s, b) = f.put("/api/globalTags/gt/status", json!({"status": "locked"}));
    assert_eq!((s, b["status"].as_str().unwrap()), (200, "locked"));
    let (s, b) = f.insert(4);
    assert_eq!((s, code(&b).as_str()), (423, "global_tag_locked"));
    // Reads still work on a locked tag.
    assert_eq!(f.get("/api/payloadIOVs?gtName=gt&majorIOV=9&minorIOV=0").0, 200);
    let (s, _) = f.put("/api/globalTags/gt/status", json!({"status": "unlocked"}));
    assert_eq!(s, 200);
    assert_eq!(f.insert(4).0, 201);

    let (s, b) = f.get("/api/payloadIOVs?gtName=gt&majorIOV=1&minorIOV=0&strategy=naive");
    assert_eq!((s, code(&b).as_str()), (400, "strategy_not_allowed"));
    let (s, b) = f.get("/no/such/route");
    assert_eq!((s, code(&b).as_str()), (404, "route_not_found"));
    let (s, b) = f.put("/api/payloadTypes", json!({}));
    assert_eq!((s, code(&b).as_str()), (405, "method_not_allowed"));
}

#[test]
fn benchmark_mode_accepts_both_strategies() {
    let f = fixture(ServiceOptions {
        policy: ApiPolicy {
            benchmark_mode: true,
            ..ApiPolicy::default()
        },
        ..ServiceOptions::default()
    });
    f.populate();
    for m in [1, 5, 9] {
        f.insert(m);
    }
    let mut bodies = Vec::new();
    for s in ResolutionStrategy::ALL {
        let (status, body) = f.get_raw(&format!("/api/payloadIOVs?gtName=gt&majorIOV=6&minorIOV=0&strategy={s}"));
        assert_eq!(status, 200);
        bodies.push(body);
    }
    assert_eq!(bodies[0], bodies[1]);
}

#[test]
fn read_only_mode() {
    let f = fixture(ServiceOptions {
        policy: ApiPolicy {
            read_only: true,
            ..ApiPolicy::default()
        },
        ..ServiceOptions::default()
    });
    let (s, b) = f.post("/api/globalTags", json!({"name": "x"}));
    assert_eq!((s, b["code"].as_str().unwrap()), (403, "read_only"));
    assert_eq!(f.get("/api/globalTags").0, 200);
}

#[test]
fn healthz_reports_counts_then_503_when_file_removed() {
    let f = fixture(ServiceOptions::default());
    let (s, body) = f.get("/healthz");
    assert_eq!(s, 200);
    let doc: HealthDocument = serde_json::from_value(body).unwrap();
    assert_eq!(doc.status, "ok");
    assert_eq!(doc.row_counts.payload_iovs, 0);
    assert_eq!(doc.row_counts.global_tags, 0);

    std::fs::remove_file(f.dir.path().join("db.sqlite")).unwrap();
    let (s, body) = f.get("/healthz");
    assert_eq!((s, body["code"].as_str().unwrap()), (503, "store_unavailable"));
}

#[test]
fn request_log_has_one_line_per_request() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("requests.log");
    let f = fixture(ServiceOptions {
        request_log_path: Some(log.clone()),
        ..ServiceOptions::default()
    });
    f.get("/healthz");
    f.get("/api/globalTags");
    f.post("/api/globalTags", json!({"name": "x"}));
    f.server.addr();
    let lines: Vec<Value> = std::fs::read_to_string(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[2]["method"], "POST");
    assert_eq!(lines[2]["path"], "/api/globalTags");
    assert_eq!(lines[2]["status"], 201);
    assert!(lines[0]["latency_us"].as_u64().is_some());
}

#[test]
fn queue_overflow_returns_503_with_retry_after() {
    // One handler slot, no queue: concurrent requests beyond the first are refused.
    let f = fixture(ServiceOptions {
        max_in_flight: 1,
        queue_capacity: 0,
        ..ServiceOptions::default()
    });
    f.populate();
    let url = f.url("/api/payloadIOVs?gtName=gt&majorIOV=1&minorIOV=0");
    let handles: Vec<_> = (0..32)
        .map(|_| {
            let url = url.clone();
            std::thread::spawn(move || {
                let r = Client::new().get(url).send().unwrap();
                (r.status().as_u16(), r.headers().get("retry-after").is_some())
            })
        })
        .collect();
    let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert!(results.iter().all(|(s, _)| *s == 200 || *s == 503));
    assert!(results.iter().filter(|(s, _)| *s == 503).all(|(_, retry)| *retry));
    assert!(results.iter().any(|(s, _)| *s == 200));
}

#[test]
fn queued_requests_all_succeed() {
    let f = fixture(ServiceOptions {
        max_in_flight: 1,
        queue_capacity: 1000,
        ..ServiceOptions::default()
    });
    f.populate();
    let url = f.url("/api/payloadIOVs?gtName=gt&majorIOV=1&minorIOV=0");
    let handles: Vec<_> = (0..32)
        .map(|_| {
            let url = url.clone();
            std::thread::spawn(move || Client::new().get(url).send().unwrap().status().as_u16())
        })
        .collect();
    assert!(handles.into_iter().all(|h| h.join().unwrap() == 200));
}
