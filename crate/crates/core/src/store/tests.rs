use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use super::*;
use crate::domain::{oracle_resolve, Checksum, TagContents};
use crate::error::{EntityKind, StoreError};

struct Backend {
    name: &'static str,
    store: Arc<dyn ConditionsStore>,
    _dir: Option<TempDir>,
}

fn sqlite() -> (Arc<SqliteStore>, TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let store = SqliteStore::open(dir.path().join("condb.sqlite"), 4).unwrap();
    store.migrate().unwrap();
    (Arc::new(store), dir)
}

fn backends() -> Vec<Backend> {
    let (s, dir) = sqlite();
    vec![
        Backend {
            name: "sqlite",
            store: s,
            _dir: Some(dir),
        },
        Backend {
            name: "memory",
            store: Arc::new(MemoryStore::new()),
            _dir: None,
        },
    ]
}

fn new_iov(major: u32, minor: u32) -> NewPayloadIov {
    NewPayloadIov {
        payload_url: format!("{:02x}/{:02x}/{major}-{minor}", major % 256, minor % 256),
        checksum: Checksum::parse(&format!("{:064x}", (major as u64) << 32 | minor as u64)).unwrap(),
        size_bytes: major as u64 + minor as u64,
        start: IovPoint::new(major, minor),
    }
}

fn tag_with_list(s: &dyn ConditionsStore, tag: &str, ty: &str) {
    if s.describe_global_tag(tag).is_err() {
        s.create_global_tag(tag).unwrap();
    }
    if !s.list_payload_types().unwrap().iter().any(|t| t.name == ty) {
        s.create_payload_type(ty).unwrap();
    }
    s.attach_payload_list(tag, ty).unwrap();
}

/// Reads a tag back in full for the oracle.
fn contents(s: &dyn ConditionsStore, tag: &str) -> TagContents {
    let desc = s.describe_global_tag(tag).unwrap();
    TagContents {
        lists: desc
            .payload_lists
            .iter()
            .map(|l| (l.payload_type.clone(), s.list_payload_iovs(tag, &l.payload_type).unwrap()))
            .collect(),
    }
}

fn starts(r: &[ResolutionResult]) -> Vec<(String, IovPoint)> {
    r.iter().map(|x| (x.payload_type.clone(), x.payload_iov.start())).collect()
}

#[test]
fn migrate_is_idempotent() {
    let (s, _dir) = sqlite();
    s.migrate().unwrap();
    s.migrate().unwrap();
    let h = s.health().unwrap();
    assert_eq!(h.schema_version, SCHEMA_VERSION);
    assert_eq!(h.row_counts, RowCounts::default());
}

#[test]
fn migrate_rejects_foreign_tables() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("foreign.sqlite");
    {
        let conn = rusqlite::Connection::open(&path).unwrap();
        conn.execute_batch("CREATE TABLE global_tag (id INTEGER, label TEXT);").unwrap();
    }
    let s = SqliteStore::open(&path, 1).unwrap();
    assert!(matches!(s.migrate(), Err(StoreError::SchemaConflict(_))));
}

#[test]
fn migrate_rejects_other_schema_version() {
    let (s, dir) = sqlite();
    drop(s);
    let path = dir.path().join("condb.sqlite");
    {
        let conn = rusqlite::Connection::open(&path).unwrap();
        conn.execute("UPDATE schema_meta SET value = '99' WHERE key = 'schema_version'", [])
            .unwrap();
    }
    let s = SqliteStore::open(&path, 1).unwrap();
    assert!(matches!(s.migrate(), Err(StoreError::SchemaConflict(_))));
}

#[test]
fn global_tag_lifecycle() {
    for b in backends() {
        let s = &*b.store;
        let tag = s.create_global_tag("sPHENIX_2024_v1").unwrap();
        assert_eq!(tag.status, GlobalTagStatus::Unlocked, "{}", b.name);
        assert!(matches!(
            s.create_global_tag("sPHENIX_2024_v1"),
            Err(StoreError::AlreadyExists { kind: EntityKind::GlobalTag, .. })
        ));
        assert!(matches!(s.create_global_tag("a/b"), Err(StoreError::Validation(_))));
        assert!(matches!(
            s.set_global_tag_status("missing", GlobalTagStatus::Locked),
            Err(StoreError::NotFound { .. })
        ));
    }
}

#[test]
fn lock_blocks_mutations_but_not_reads() {
    for b in backends() {
        let s = &*b.store;
        tag_with_list(s, "gt", "emcal_geometry");
        s.insert_payload_iov("gt", "emcal_geometry", new_iov(1, 0)).unwrap();
        s.create_payload_type("other").unwrap();

        let locked = s.set_global_tag_status("gt", GlobalTagStatus::Locked).unwrap();
        assert_eq!(locked.status, GlobalTagStatus::Locked);
        // Locking twice is fine.
        s.set_global_tag_status("gt", GlobalTagStatus::Locked).unwrap();

        assert!(matches!(
            s.insert_payload_iov("gt", "emcal_geometry", new_iov(2, 0)),
            Err(StoreError::Locked(_))
        ), "{}", b.name);
        assert!(matches!(
            s.insert_payload_iovs_bulk("gt", "emcal_geometry", vec![new_iov(3, 0)]),
            Err(StoreError::Locked(_))
        ));
        assert!(matches!(s.attach_payload_list("gt", "other"), Err(StoreError::Locked(_))));

        let r = s
            .resolve_payload_iovs("gt", IovPoint::new(5, 0), ResolutionStrategy::OptimizedSingleQuery)
            .unwrap();
        assert_eq!(r.len(), 1);

        s.set_global_tag_status("gt", GlobalTagStatus::Unlocked).unwrap();
        s.insert_payload_iov("gt", "emcal_geometry", new_iov(2, 0)).unwrap();
        s.attach_payload_list("gt", "other").unwrap();
    }
}

#[test]
fn payload_type_rules() {
    for b in backends() {
        let s = &*b.store;
        assert_eq!(s.create_payload_type("emcal_geometry").unwrap().name, "emcal_geometry");
        assert!(matches!(
            s.create_payload_type("emcal_geometry"),
            Err(StoreError::AlreadyExists { kind: EntityKind::PayloadType, .. })
        ));
        assert!(matches!(s.create_payload_type(""), Err(StoreError::Validation(_))));
    }
}

#[test]
fn attach_rules() {
    for b in backends() {
        let s = &*b.store;
        s.create_global_tag("gt").unwrap();
        s.create_payload_type("ty").unwrap();
        let list = s.attach_payload_list("gt", "ty").unwrap();
        assert_eq!((list.global_tag.as_str(), list.payload_type.as_str()), ("gt", "ty"));
        assert!(matches!(
            s.attach_payload_list("gt", "ty"),
            Err(StoreError::AlreadyExists { kind: EntityKind::PayloadList, .. })
        ));
        assert!(matches!(
            s.attach_payload_list("nope", "ty"),
            Err(StoreError::NotFound { kind: EntityKind::GlobalTag, .. })
        ));
        assert!(matches!(
            s.attach_payload_list("gt", "nope"),
            Err(StoreError::NotFound { kind: EntityKind::PayloadType, .. })
        ));
        s.create_global_tag("locked").unwrap();
        s.set_global_tag_status("locked", GlobalTagStatus::Locked).unwrap();
        assert!(matches!(s.attach_payload_list("locked", "ty"), Err(StoreError::Locked(_))));
        assert!(s.describe_global_tag("gt").unwrap().payload_lists[0].iov_count == 0);
    }
}

#[test]
fn insert_rules() {
    for b in backends() {
        let s = &*b.store;
        tag_with_list(s, "gt", "ty");
        let stored = s.insert_payload_iov("gt", "ty", new_iov(5, 0)).unwrap();
        assert_eq!(stored.start(), IovPoint::new(5, 0));
        match s.insert_payload_iov("gt", "ty", new_iov(5, 0)) {
            Err(StoreError::DuplicateStart { existing, .. }) => assert_eq!(existing, IovPoint::new(5, 0)),
            other => panic!("{}: {other:?}", b.name),
        }
        assert!(matches!(
            s.insert_payload_iov("gt", "missing", new_iov(1, 0)),
            Err(StoreError::NotFound { kind: EntityKind::PayloadType, .. })
        ));
        s.create_payload_type("unattached").unwrap();
        assert!(matches!(
            s.insert_payload_iov("gt", "unattached", new_iov(1, 0)),
            Err(StoreError::NotFound { kind: EntityKind::PayloadList, .. })
        ));
        let mut abs = new_iov(9, 0);
        abs.payload_url = "/etc/passwd".into();
        assert!(matches!(s.insert_payload_iov("gt", "ty", abs), Err(StoreError::Validation(_))));
        // A failed bulk batch leaves nothing behind.
        assert!(s
            .insert_payload_iovs_bulk("gt", "ty", vec![new_iov(20, 0), new_iov(5, 0)])
            .is_err());
        assert_eq!(s.list_payload_iovs("gt", "ty").unwrap().len(), 1);
        // Extreme coordinates survive the signed storage mapping.
        s.insert_payload_iov("gt", "ty", new_iov(u32::MAX, u32::MAX)).unwrap();
        s.insert_payload_iov("gt", "ty", new_iov(0, 0)).unwrap();
        let top = s
            .resolve_payload_iovs("gt", IovPoint::new(u32::MAX, u32::MAX), ResolutionStrategy::OptimizedSingleQuery)
            .unwrap();
        assert_eq!(top[0].payload_iov.start(), IovPoint::new(u32::MAX, u32::MAX));
        let mid = s
            .resolve_payload_iovs("gt", IovPoint::new(u32::MAX - 1, 0), ResolutionStrategy::NaivePerType)
            .unwrap();
        assert_eq!(mid[0].payload_iov.start(), IovPoint::new(5, 0));
    }
}

#[test]
fn insertion_order_does_not_change_answers() {
    let mut answers = Vec::new();
    for descending in [false, true] {
        let (s, _dir) = sqlite();
        tag_with_list(&*s, "gt", "ty");
        let mut majors: Vec<u32> = (0..50).map(|k| k * 7).collect();
        if descending {
            majors.reverse();
        }
        for m in majors {
            s.insert_payload_iov("gt", "ty", new_iov(m, 0)).unwrap();
        }
        let got: Vec<_> = (0..400)
            .map(|q| {
                let r = s
                    .resolve_payload_iovs("gt", IovPoint::new(q, 1), ResolutionStrategy::OptimizedSingleQuery)
                    .unwrap();
                assert_eq!(r, oracle_resolve(&contents(&*s, "gt"), IovPoint::new(q, 1).combined()));
                starts(&r)
            })
            .collect();
        answers.push(got);
    }
    assert_eq!(answers[0], answers[1]);
}

#[test]
fn unknown_tag_and_empty_answers() {
    for b in backends() {
        let s = &*b.store;
        for strategy in ResolutionStrategy::ALL {
            assert!(matches!(
                s.resolve_payload_iovs("nope", IovPoint::new(1, 1), strategy),
                Err(StoreError::NotFound { .. })
            ));
        }
        tag_with_list(s, "gt", "ty");
        s.insert_payload_iov("gt", "ty", new_iov(10, 0)).unwrap();
        for strategy in ResolutionStrategy::ALL {
            assert!(s.resolve_payload_iovs("gt", IovPoint::new(9, 99), strategy).unwrap().is_empty());
        }
    }
}

/// 100 types x 200 IoVs, random queries, every answer has one entry per type
/// and equals the oracle.
#[test]
fn moderate_population_matches_oracle() {
    let (s, _dir) = sqlite();
    s.create_global_tag("moderate").unwrap();
    for t in 0..100 {
        let ty = format!("type_{t:03}");
        s.create_payload_type(&ty).unwrap();
        s.attach_payload_list("moderate", &ty).unwrap();
        s.insert_payload_iovs_bulk("moderate", &ty, (0..200).map(|k| new_iov(k * 10, 0)).collect())
            .unwrap();
    }
    let oracle_data = contents(&*s, "moderate");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let q = IovPoint::new(rng.random_range(0..=1990), rng.random());
        let expected = oracle_resolve(&oracle_data, q.combined());
        assert_eq!(expected.len(), 100);
        for strategy in ResolutionStrategy::ALL {
            assert_eq!(s.resolve_payload_iovs("moderate", q, strategy).unwrap(), expected);
        }
    }
}

#[test]
fn randomized_strategies_agree_with_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (s, _dir) = sqlite();
    let mem = MemoryStore::new();
    let mut total = 0;
    for t in 0..8 {
        let ty = format!("t{t}");
        for st in [&*s as &dyn ConditionsStore, &mem] {
            tag_with_list(st, "gt", &ty);
        }
        let n = rng.random_range(0..=120);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..n {
            let p = (rng.random_range(0..300u32), rng.random_range(0..3u32));
            if seen.insert(p) {
                for st in [&*s as &dyn ConditionsStore, &mem] {
                    st.insert_payload_iov("gt", &ty, new_iov(p.0, p.1)).unwrap();
                }
                total += 1;
            }
        }
    }
    assert!(total <= 1000);
    let data = contents(&*s, "gt");
    for _ in 0..1000 {
        let q = IovPoint::new(rng.random_range(0..320), rng.random_range(0..4));
        let expected = starts(&oracle_resolve(&data, q.combined()));
        for strategy in ResolutionStrategy::ALL {
            assert_eq!(starts(&s.resolve_payload_iovs("gt", q, strategy).unwrap()), expected);
        }
        assert_eq!(starts(&mem.resolve_payload_iovs("gt", q, ResolutionStrategy::default()).unwrap()), expected);
    }
}

#[test]
fn catalog_views() {
    for b in backends() {
        let s = &*b.store;
        assert!(s.list_global_tags().unwrap().is_empty());
        assert!(s.list_payload_types().unwrap().is_empty());
        for n in ["c", "a", "b"] {
            s.create_global_tag(n).unwrap();
        }
        let names: Vec<_> = s.list_global_tags().unwrap().into_iter().map(|t| t.name).collect();
        assert_eq!(names, ["a", "b", "c"]);
        assert!(matches!(s.describe_global_tag("zzz"), Err(StoreError::NotFound { .. })));
    }
}

#[test]
fn describe_tiny_population() {
    for b in backends() {
        let s = &*b.store;
        s.create_global_tag("tiny").unwrap();
        for t in 0..10 {
            let ty = format!("tiny_{t}");
            s.create_payload_type(&ty).unwrap();
            s.attach_payload_list("tiny", &ty).unwrap();
            assert_eq!(
                s.insert_payload_iovs_bulk("tiny", &ty, (0..10).map(|k| new_iov(k, 0)).collect()).unwrap(),
                10
            );
        }
        let d = s.describe_global_tag("tiny").unwrap();
        assert_eq!(d.payload_lists.len(), 10);
        assert!(d.payload_lists.iter().all(|l| l.iov_count == 10));
        assert_eq!(s.health().unwrap().row_counts.payload_iovs, 100);
        assert_eq!(s.payload_urls().unwrap().len(), 10);
    }
}

#[test]
fn health_fails_when_file_removed() {
    let (s, dir) = sqlite();
    assert!(s.health().is_ok());
    std::fs::remove_file(dir.path().join("condb.sqlite")).unwrap();
    assert!(matches!(s.health(), Err(StoreError::Unavailable(_))));
}

#[test]
fn concurrent_duplicate_inserts_have_one_winner() {
    for b in backends() {
        let s = b.store.clone();
        tag_with_list(&*s, "gt", "ty");
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let s = s.clone();
                std::thread::spawn(move || s.insert_payload_iov("gt", "ty", new_iov(42, 0)).is_ok())
            })
            .collect();
        let wins = handles.into_iter().filter(|_| true).map(|h| h.join().unwrap()).filter(|ok| *ok).count();
        assert_eq!(wins, 1, "{}", b.name);
    }
}

#[test]
fn concurrent_readers_and_writers() {
    let (s, _dir) = sqlite();
    tag_with_list(&*s, "gt", "ty");
    s.insert_payload_iov("gt", "ty", new_iov(0, 0)).unwrap();
    let writer = {
        let s = s.clone();
        std::thread::spawn(move || {
            for m in 1..200 {
                s.insert_payload_iov("gt", "ty", new_iov(m, 0)).unwrap();
            }
        })
    };
    let readers: Vec<_> = (0..4)
        .map(|_| {
            let s = s.clone();
            std::thread::spawn(move || {
                for _ in 0..200 {
                    let r = s
                        .resolve_payload_iovs("gt", IovPoint::new(1000, 0), ResolutionStrategy::OptimizedSingleQuery)
                        .unwrap();
                    assert_eq!(r.len(), 1);
                }
            })
        })
        .collect();
    writer.join().unwrap();
    for r in readers {
        r.join().unwrap();
    }
    let last = s
        .resolve_payload_iovs("gt", IovPoint::new(1000, 0), ResolutionStrategy::NaivePerType)
        .unwrap();
    assert_eq!(last[0].payload_iov.start(), IovPoint::new(199, 0));
}

#[test]
fn optimized_plan_uses_covering_index() {
    let (s, _dir) = sqlite();
    let plan = s.explain_resolution(ResolutionStrategy::OptimizedSingleQuery).unwrap();
    assert!(
        s.resolution_uses_index_condition(ResolutionStrategy::OptimizedSingleQuery).unwrap(),
        "{plan:#?}"
    );
    s.degrade_covering_index().unwrap();
    assert!(!s.resolution_uses_index_condition(ResolutionStrategy::OptimizedSingleQuery).unwrap());
    // Still correct, just slower.
    tag_with_list(&*s, "gt", "ty");
    s.insert_payload_iov("gt", "ty", new_iov(3, 0)).unwrap();
    let r = s.resolve_payload_iovs("gt", IovPoint::new(4, 0), ResolutionStrategy::OptimizedSingleQuery).unwrap();
    assert_eq!(r[0].payload_iov.start(), IovPoint::new(3, 0));
    s.migrate().unwrap();
    assert!(s.resolution_uses_index_condition(ResolutionStrategy::OptimizedSingleQuery).unwrap());
}
