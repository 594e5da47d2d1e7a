//! Backend-independent checks of the client surface.
//!
//! [`run`] drives a fixed script of operations through a transport and
//! returns the outcome of every check together with the raw transcript. Two
//! backends are equivalent when both reports pass and their transcripts are
//! equal byte for byte. The backend must start empty, and for equal
//! transcripts both must stamp rows with the same clock.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use condb_core::api::{ApiRequest, InsertPayloadIovBody};
use condb_core::{Checksum, GlobalTagStatus, IovPoint};

use crate::transport::{Exchange, RecordingTransport, Transport};
use crate::{Client, ClientConfig, ClientError};

pub const TAG: &str = "conformance_gt";
pub const TYPE_A: &str = "emcal";
pub const TYPE_B: &str = "tracking";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub name: &'static str,
    pub outcome: Result<(), String>,
}

#[derive(Debug, Clone)]
pub struct ConformanceReport {
    pub checks: Vec<Check>,
    pub transcript: Vec<Exchange>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.outcome.is_ok())
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.outcome.is_err()).collect()
    }
}

struct Runner {
    checks: Vec<Check>,
}

impl Runner {
    fn check(&mut self, name: &'static str, f: impl FnOnce() -> Result<(), String>) {
        self.checks.push(Check { name, outcome: f() });
    }
}

fn expect_code<T: std::fmt::Debug>(r: Result<T, ClientError>, code: &str) -> Result<(), String> {
    match r {
        Err(e) if e.api_code() == Some(code) => Ok(()),
        other => Err(format!("expected error code {code}, got {other:?}")),
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Runs the suite. `scratch` must be an empty directory; payload files and
/// the payload store are created below it.
pub fn run(transport: Arc<dyn Transport>, scratch: &Path) -> ConformanceReport {
    let recorder = Arc::new(RecordingTransport::new(transport));
    let store_dir = store_dir(scratch);
    let config = ClientConfig {
        read_dir_prefix: store_dir.clone(),
        write_dir_prefixes: vec![store_dir.clone()],
        cache_ttl_secs: 3600.0,
        ..ClientConfig::default()
    };
    let client = Client::with_transport(config.clone(), recorder.clone());
    let mut r = Runner { checks: Vec::new() };

    let file_a = scratch.join("a.bin");
    let file_b = scratch.join("b.bin");
    let setup = std::fs::write(&file_a, b"conditions payload A\n").and_then(|()| std::fs::write(&file_b, b"payload B\n"));
    r.check("scratch files", || setup.map_err(s));

    r.check("health on empty backend", || {
        let h = client.health().map_err(s)?;
        ensure(h.status == "ok" && h.row_counts.payload_iovs == 0, || format!("{h:?}"))
    });
    r.check("no global tags initially", || {
        ensure(client.list_global_tags().map_err(s)?.is_empty(), || "tags present".into())
    });
    r.check("create global tag", || {
        let gt = client.create_global_tag(TAG).map_err(s)?;
        ensure(gt.status == GlobalTagStatus::Unlocked, || format!("{gt:?}"))
    });
    r.check("duplicate global tag", || expect_code(client.create_global_tag(TAG), "global_tag_exists"));
    r.check("invalid name", || expect_code(client.create_global_tag("no/slashes"), "invalid_name"));
    r.check("create payload types", || {
        client.create_payload_type(TYPE_B).map_err(s)?;
        client.create_payload_type(TYPE_A).map_err(s)?;
        let names: Vec<_> = client.list_payload_types().map_err(s)?.into_iter().map(|t| t.name).collect();
        ensure(names == [TYPE_A, TYPE_B], || format!("{names:?}"))
    });
    r.check("attach payload lists", || {
        client.attach_payload_list(TAG, TYPE_A).map_err(s)?;
        client.attach_payload_list(TAG, TYPE_B).map_err(s)?;
        Ok(())
    });
    r.check("duplicate payload list", || expect_code(client.attach_payload_list(TAG, TYPE_A), "payload_list_exists"));
    r.check("attach unknown type", || expect_code(client.attach_payload_list(TAG, "nope"), "payload_type_not_found"));
    r.check("resolve empty tag", || {
        let res = client.resolve(TAG, 7, 3).map_err(s)?;
        ensure(res.is_empty(), || format!("{res:?}"))
    });
    client.clear_cache();

    r.check("insert payloads", || {
        let a = client.insert_payload(TAG, TYPE_A, 1, 0, &file_a).map_err(s)?;
        ensure(a.copied, || "first copy not reported".into())?;
        client.insert_payload(TAG, TYPE_A, 5, 0, &file_b).map_err(s)?;
        // Same bytes as (1,0) of the other type: stored once.
        let again = client.insert_payload(TAG, TYPE_B, 3, 0, &file_a).map_err(s)?;
        ensure(!again.copied && again.stored_at == a.stored_at, || format!("{again:?}"))
    });
    r.check("resolve picks greatest start at or before the query", || {
        let res = client.resolve(TAG, 7, 0).map_err(s)?;
        let got: Vec<_> = res.iter().map(|x| (x.payload_type.as_str(), x.payload_iov.start())).collect();
        ensure(
            got == [(TYPE_A, IovPoint::new(5, 0)), (TYPE_B, IovPoint::new(3, 0))],
            || format!("{got:?}"),
        )
    });
    r.check("identical resolutions within ttl hit the cache", || {
        let before = client.request_count();
        let x = client.resolve(TAG, 4, 9).map_err(s)?;
        let y = client.resolve(TAG, 4, 9).map_err(s)?;
        let sent = client.request_count() - before;
        ensure(sent == 1 && x == y, || format!("{sent} requests"))
    });
    r.check("query before every start", || {
        match client.get_payload_url(TAG, TYPE_A, 0, 5) {
            Err(ClientError::NoPayload { .. }) => Ok(()),
            other => Err(format!("{other:?}")),
        }
    });
    r.check("payload url gets the read prefix", || {
        let p = client.get_payload_url(TAG, TYPE_A, 7, 0).map_err(s)?;
        ensure(p.starts_with(&store_dir) && p.is_file(), || p.display().to_string())
    });
    r.check("fetch with verification", || {
        let h = client.fetch_payload(TAG, TYPE_B, 100, 0, true).map_err(s)?;
        ensure(h.verified, || format!("{h:?}"))?;
        let h = client.fetch_payload(TAG, TYPE_B, 100, 0, false).map_err(s)?;
        ensure(!h.verified, || format!("{h:?}"))
    });
    r.check("corrupted payload fails verification", || {
        let path = client.get_payload_url(TAG, TYPE_A, 5, 0).map_err(s)?;
        let original = std::fs::read(&path).map_err(s)?;
        let mut bad = original.clone();
        bad[0] ^= 1;
        std::fs::write(&path, &bad).map_err(s)?;
        let outcome = client.fetch_payload(TAG, TYPE_A, 5, 0, true);
        std::fs::write(&path, &original).map_err(s)?;
        match outcome {
            Err(ClientError::Integrity { .. }) => Ok(()),
            other => Err(format!("{other:?}")),
        }
    });
    r.check("duplicate start refused before copying", || {
        expect_code(client.insert_payload(TAG, TYPE_A, 5, 0, &file_a), "duplicate_iov_start")
    });
    r.check("duplicate start refused by the service", || {
        let resp = client
            .send(&ApiRequest::InsertPayloadIov(InsertPayloadIovBody {
                global_tag: TAG.into(),
                payload_type: TYPE_A.into(),
                payload_url: "00/00/x".into(),
                checksum: "0".repeat(64),
                size: 0,
                major_iov: 5,
                minor_iov: 0,
            }))
            .map_err(s)?;
        expect_code(resp.decode::<serde_json::Value>().map_err(ClientError::Api), "duplicate_iov_start")
    });
    r.check("out of range coordinate", || {
        let resp = client
            .send(&ApiRequest::ResolvePayloadIovs {
                global_tag: TAG.into(),
                major_iov: 1 << 32,
                minor_iov: 0,
                strategy: None,
            })
            .map_err(s)?;
        ensure(resp.status == 400, || format!("status {}", resp.status))?;
        expect_code(resp.decode::<serde_json::Value>().map_err(ClientError::Api), "invalid_iov")
    });
    r.check("unknown tag", || expect_code(client.resolve("missing_gt", 1, 1), "global_tag_not_found"));
    r.check("locked tag refuses inserts", || {
        client.set_global_tag_status(TAG, GlobalTagStatus::Locked).map_err(s)?;
        let pre = expect_code(client.insert_payload(TAG, TYPE_A, 9, 0, &file_b), "global_tag_locked");
        let direct = expect_code(
            client.insert_payload_iov(TAG, TYPE_A, "00/00/y", &Checksum::parse(&"1".repeat(64)).expect("literal checksum"), 1, IovPoint::new(9, 0)),
            "global_tag_locked",
        );
        client.clear_cache();
        let read = client.resolve(TAG, 9, 0).map(|_| ()).map_err(s);
        client.set_global_tag_status(TAG, GlobalTagStatus::Unlocked).map_err(s)?;
        pre.and(direct).and(read)
    });
    r.check("describe global tag", || {
        let d = client.describe_global_tag(TAG).map_err(s)?;
        let counts: Vec<_> = d.payload_lists.iter().map(|l| (l.payload_type.as_str(), l.iov_count)).collect();
        ensure(counts == [(TYPE_A, 2), (TYPE_B, 1)], || format!("{counts:?}"))
    });
    r.check("list payload iovs", || {
        let iovs = client.list_payload_iovs(TAG, TYPE_A).map_err(s)?;
        let starts: Vec<_> = iovs.iter().map(|i| i.start()).collect();
        ensure(starts == [IovPoint::new(1, 0), IovPoint::new(5, 0)], || format!("{starts:?}"))
    });
    r.check("store and metadata agree", || {
        let report = client.audit_orphans(&config.write_dir_prefixes, None).map_err(s)?;
        ensure(report.is_clean() && report.scanned_files == 2, || format!("{report:?}"))
    });
    r.check("override bypasses the service", || {
        let local = scratch.join("my_emcal.root");
        let mut cfg = config.clone();
        cfg.override_map.insert(TYPE_A.into(), local.clone());
        let c = Client::with_transport(cfg, recorder.clone());
        let p = c.get_payload_url(TAG, TYPE_A, 7, 0).map_err(s)?;
        let h = c.fetch_payload(TAG, TYPE_A, 7, 0, true).map_err(s)?;
        ensure(p == local && h.from_override && c.request_count() == 0, || format!("{p:?}"))
    });
    r.check("final counts", || {
        let h = client.health().map_err(s)?;
        let c = h.row_counts;
        ensure(
            (c.global_tags, c.payload_types, c.payload_lists, c.payload_iovs) == (1, 2, 2, 3),
            || format!("{c:?}"),
        )
    });

    ConformanceReport {
        checks: r.checks,
        transcript: recorder.transcript(),
    }
}

/// Paths used by [`run`] below `scratch`.
pub fn store_dir(scratch: &Path) -> PathBuf {
    scratch.join("store")
}
