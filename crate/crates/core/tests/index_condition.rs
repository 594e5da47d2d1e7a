//! The optimized resolution must stay an index condition once the IoV table
//! is large and planner statistics are present.

use condb_core::{Checksum, ConditionsStore, IovPoint, NewPayloadIov, ResolutionStrategy, SqliteStore};

#[test]
fn index_condition_at_1e5_rows() {
    let dir = tempfile::tempdir().unwrap();
    let store = SqliteStore::open(dir.path().join("big.sqlite"), 2).unwrap();
    store.migrate().unwrap();
    store.create_global_tag("big").unwrap();
    let checksum = Checksum::parse(&"0f".repeat(32)).unwrap();
    for t in 0..100 {
        let ty = format!("type_{t:03}");
        store.create_payload_type(&ty).unwrap();
        store.attach_payload_list("big", &ty).unwrap();
        let iovs = (0..1000)
            .map(|k| NewPayloadIov {
                payload_url: format!("0f/0f/{t}-{k}"),
                checksum: checksum.clone(),
                size_bytes: 1,
                start: IovPoint::new(k * 3, 0),
            })
            .collect();
        store.insert_payload_iovs_bulk("big", &ty, iovs).unwrap();
    }
    store.analyze().unwrap();
    assert_eq!(store.health().unwrap().row_counts.payload_iovs, 100_000);

    let plan = store.explain_resolution(ResolutionStrategy::OptimizedSingleQuery).unwrap();
    assert!(
        store.resolution_uses_index_condition(ResolutionStrategy::OptimizedSingleQuery).unwrap(),
        "{plan:#?}"
    );
    assert!(!plan.iter().any(|l| l.starts_with("SCAN iov")), "{plan:#?}");

    let r = store
        .resolve_payload_iovs("big", IovPoint::new(1500, 7), ResolutionStrategy::OptimizedSingleQuery)
        .unwrap();
    assert_eq!(r.len(), 100);
    assert!(r.iter().all(|x| x.payload_iov.start() == IovPoint::new(1500, 0)));
}
