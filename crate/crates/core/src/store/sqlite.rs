use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use r2d2::{Pool, PooledConnection};
use r2d2_sqlite::SqliteConnectionManager;
use rusqlite::{params, Connection, ErrorCode, OptionalExtension, Row, TransactionBehavior};

use super::{ConditionsStore, HealthReport, ResolutionStrategy, RowCounts, SCHEMA_VERSION};
use crate::domain::{
    validate_name, Checksum, Clock, GlobalTag, GlobalTagDescription, GlobalTagStatus,
    NewPayloadIov, PayloadIov, PayloadList, PayloadListSummary, PayloadType, ResolutionResult,
    SystemClock, Timestamp,
};
use crate::error::{EntityKind, StoreError, StoreResult};
use crate::iov::{CombinedIov, IovPoint};

pub const IOV_TABLE: &str = "payload_iov";
pub const COVERING_INDEX: &str = "payload_iov_covering";
const COVERING_INDEX_COLUMNS: i64 = 8;
/// Names under which the IoV table appears in query plans.
const IOV_ALIASES: [&str; 3] = [IOV_TABLE, "iov", "iov_top"];

const ENTITY_TABLES: [&str; 5] = [
    "global_tag_status",
    "global_tag",
    "payload_type",
    "payload_list",
    "payload_iov",
];

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS global_tag_status (
    id   INTEGER PRIMARY KEY,
    name TEXT NOT NULL UNIQUE
);
INSERT OR IGNORE INTO global_tag_status (id, name) VALUES (1, 'locked'), (2, 'unlocked');

CREATE TABLE IF NOT EXISTS global_tag (
    id         INTEGER PRIMARY KEY,
    name       TEXT NOT NULL UNIQUE,
    status_id  INTEGER NOT NULL REFERENCES global_tag_status (id),
    created_at INTEGER NOT NULL
);

CREATE TABLE IF NOT EXISTS payload_type (
    id         INTEGER PRIMARY KEY,
    name       TEXT NOT NULL UNIQUE,
    created_at INTEGER NOT NULL
);

CREATE TABLE IF NOT EXISTS payload_list (
    id              INTEGER PRIMARY KEY,
    global_tag_id   INTEGER NOT NULL REFERENCES global_tag (id),
    payload_type_id INTEGER NOT NULL REFERENCES payload_type (id),
    created_at      INTEGER NOT NULL,
    UNIQUE (global_tag_id, payload_type_id)
);

CREATE TABLE IF NOT EXISTS payload_iov (
    id              INTEGER PRIMARY KEY,
    payload_list_id INTEGER NOT NULL REFERENCES payload_list (id),
    payload_url     TEXT NOT NULL,
    checksum        TEXT NOT NULL,
    size_bytes      INTEGER NOT NULL,
    major_iov       INTEGER NOT NULL,
    minor_iov       INTEGER NOT NULL,
    combined_iov    INTEGER NOT NULL,
    inserted_at     INTEGER NOT NULL
);

CREATE UNIQUE INDEX IF NOT EXISTS payload_iov_list_start_uq
    ON payload_iov (payload_list_id, combined_iov);

CREATE INDEX IF NOT EXISTS payload_iov_covering
    ON payload_iov (payload_list_id, combined_iov,
                    payload_url, checksum, size_bytes, major_iov, minor_iov, inserted_at);
";

// combined_iov is stored through CombinedIov::to_ordered_i64, so `<=` on the
// column matches `<=` on the unsigned value. The index hint is required: for
// the equality join the planner would otherwise pick the unique start index
// and pay a table lookup per list.
const RESOLVE_OPTIMIZED: &str = "
SELECT pt.name, iov.payload_url, iov.checksum, iov.size_bytes, iov.major_iov, iov.minor_iov, iov.inserted_at
FROM global_tag gt
JOIN payload_list pl ON pl.global_tag_id = gt.id
JOIN payload_type pt ON pt.id = pl.payload_type_id
JOIN payload_iov iov INDEXED BY payload_iov_covering
  ON iov.payload_list_id = pl.id
 AND iov.combined_iov = (
        SELECT iov_top.combined_iov FROM payload_iov iov_top INDEXED BY payload_iov_covering
        WHERE iov_top.payload_list_id = pl.id AND iov_top.combined_iov <= ?2
        ORDER BY iov_top.combined_iov DESC
        LIMIT 1)
WHERE gt.name = ?1
ORDER BY pt.name";

const NAIVE_LISTS: &str = "
SELECT pl.id, pl.payload_type_id FROM payload_list pl
JOIN global_tag gt ON gt.id = pl.global_tag_id
WHERE gt.name = ?1";

const NAIVE_TYPE_NAME: &str = "SELECT name FROM payload_type WHERE id = ?1";

const NAIVE_LOOKUP: &str = "
SELECT payload_url, checksum, size_bytes, major_iov, minor_iov, inserted_at
FROM payload_iov
WHERE payload_list_id = ?1 AND combined_iov <= ?2
ORDER BY combined_iov DESC
LIMIT 1";

const INSERT_IOV: &str = "
INSERT INTO payload_iov
    (payload_list_id, payload_url, checksum, size_bytes, major_iov, minor_iov, combined_iov, inserted_at)
VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)";

/// SQLite-backed store. Readers share a connection pool (WAL mode);
/// writers are serialized in-process and use immediate transactions.
pub struct SqliteStore {
    path: PathBuf,
    pool: Pool<SqliteConnectionManager>,
    write_lock: Mutex<()>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for SqliteStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SqliteStore").field("path", &self.path).finish()
    }
}

fn init_connection(conn: &mut Connection) -> rusqlite::Result<()> {
    conn.busy_timeout(Duration::from_secs(30))?;
    conn.execute_batch(
        "PRAGMA journal_mode = WAL;
         PRAGMA synchronous = NORMAL;
         PRAGMA foreign_keys = ON;",
    )?;
    Ok(())
}

fn is_unique_violation(e: &rusqlite::Error) -> bool {
    matches!(e, rusqlite::Error::SqliteFailure(f, _)
        if f.code == ErrorCode::ConstraintViolation
            && (f.extended_code == rusqlite::ffi::SQLITE_CONSTRAINT_UNIQUE
                || f.extended_code == rusqlite::ffi::SQLITE_CONSTRAINT_PRIMARYKEY))
}

fn status_from_db(name: &str) -> StoreResult<GlobalTagStatus> {
    name.parse().map_err(StoreError::Backend)
}

fn checksum_from_db(raw: String) -> rusqlite::Result<Checksum> {
    Checksum::parse(&raw).map_err(|e| {
        rusqlite::Error::FromSqlConversionFailure(0, rusqlite::types::Type::Text, Box::new(e))
    })
}

/// Maps `payload_url, checksum, size_bytes, major_iov, minor_iov, inserted_at`
/// starting at column `offset`.
fn iov_from_row(row: &Row<'_>, offset: usize) -> rusqlite::Result<PayloadIov> {
    Ok(PayloadIov {
        payload_url: row.get(offset)?,
        checksum: checksum_from_db(row.get(offset + 1)?)?,
        size_bytes: row.get::<_, i64>(offset + 2)? as u64,
        major_iov: row.get::<_, i64>(offset + 3)? as u32,
        minor_iov: row.get::<_, i64>(offset + 4)? as u32,
        inserted_at: Timestamp::from_micros(row.get(offset + 5)?),
    })
}

struct TagRow {
    id: i64,
    tag: GlobalTag,
}

fn fetch_tag(conn: &Connection, name: &str) -> StoreResult<TagRow> {
    let row = conn
        .prepare_cached(
            "SELECT gt.id, gt.name, s.name, gt.created_at FROM global_tag gt
             JOIN global_tag_status s ON s.id = gt.status_id WHERE gt.name = ?1",
        )?
        .query_row([name], |r| {
            Ok((
                r.get::<_, i64>(0)?,
                r.get::<_, String>(1)?,
                r.get::<_, String>(2)?,
                r.get::<_, i64>(3)?,
            ))
        })
        .optional()?;
    let (id, name, status, created_at) = row.ok_or_else(|| StoreError::NotFound {
        kind: EntityKind::GlobalTag,
        name: name.to_owned(),
    })?;
    Ok(TagRow {
        id,
        tag: GlobalTag {
            name,
            status: status_from_db(&status)?,
            created_at: Timestamp::from_micros(created_at),
        },
    })
}

fn fetch_type_id(conn: &Connection, name: &str) -> StoreResult<i64> {
    conn.prepare_cached("SELECT id FROM payload_type WHERE name = ?1")?
        .query_row([name], |r| r.get(0))
        .optional()?
        .ok_or_else(|| StoreError::NotFound {
            kind: EntityKind::PayloadType,
            name: name.to_owned(),
        })
}

/// Returns the list id for `(tag, type)` after checking the tag is unlocked.
fn writable_list_id(conn: &Connection, tag: &str, payload_type: &str) -> StoreResult<i64> {
    let tag_row = fetch_tag(conn, tag)?;
    if tag_row.tag.status.is_locked() {
        return Err(StoreError::Locked(tag.to_owned()));
    }
    let type_id = fetch_type_id(conn, payload_type)?;
    conn.prepare_cached(
        "SELECT id FROM payload_list WHERE global_tag_id = ?1 AND payload_type_id = ?2",
    )?
    .query_row(params![tag_row.id, type_id], |r| r.get(0))
    .optional()?
    .ok_or_else(|| StoreError::NotFound {
        kind: EntityKind::PayloadList,
        name: format!("{tag}/{payload_type}"),
    })
}

fn list_label(tag: &str, payload_type: &str) -> String {
    format!("{tag}/{payload_type}")
}

impl SqliteStore {
    /// Opens (creating if needed) the database file. Call
    /// [`ConditionsStore::migrate`] before use.
    pub fn open(path: impl AsRef<Path>, pool_size: u32) -> StoreResult<Self> {
        Self::open_with_clock(path, pool_size, Arc::new(SystemClock))
    }

    pub fn open_with_clock(
        path: impl AsRef<Path>,
        pool_size: u32,
        clock: Arc<dyn Clock>,
    ) -> StoreResult<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)
                .map_err(|e| StoreError::Unavailable(format!("{}: {e}", parent.display())))?;
        }
        let manager = SqliteConnectionManager::file(&path).with_init(init_connection);
        let pool = Pool::builder()
            .max_size(pool_size.max(1))
            .connection_timeout(Duration::from_secs(30))
            .build(manager)?;
        Ok(Self {
            path,
            pool,
            write_lock: Mutex::new(()),
            clock,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn conn(&self) -> StoreResult<PooledConnection<SqliteConnectionManager>> {
        Ok(self.pool.get()?)
    }

    /// Runs `f` inside an immediate transaction while holding the in-process
    /// write lock.
    fn write<T>(&self, f: impl FnOnce(&rusqlite::Transaction<'_>) -> StoreResult<T>) -> StoreResult<T> {
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let mut conn = self.conn()?;
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let out = f(&tx)?;
        tx.commit()?;
        Ok(out)
    }

    /// `EXPLAIN QUERY PLAN` detail lines for the IoV lookup of `strategy`.
    pub fn explain_resolution(&self, strategy: ResolutionStrategy) -> StoreResult<Vec<String>> {
        let sql = match strategy {
            ResolutionStrategy::OptimizedSingleQuery => RESOLVE_OPTIMIZED,
            ResolutionStrategy::NaivePerType => NAIVE_LOOKUP,
        };
        let conn = self.conn()?;
        let mut stmt = conn.prepare(&format!("EXPLAIN QUERY PLAN {sql}"))?;
        let lines = stmt
            .query_map(params!["", 0i64], |r| r.get::<_, String>(3))?
            .collect::<Result<Vec<_>, _>>()?;
        Ok(lines)
    }

    /// True when the plan for `strategy` reaches the IoV table only through
    /// the covering index, never by scanning it.
    pub fn resolution_uses_index_condition(&self, strategy: ResolutionStrategy) -> StoreResult<bool> {
        let plan = self.explain_resolution(strategy)?;
        let mut searched = false;
        for line in &plan {
            let mut words = line.split_whitespace();
            let (Some(op), Some(target)) = (words.next(), words.next()) else {
                continue;
            };
            if !matches!(op, "SCAN" | "SEARCH") || !IOV_ALIASES.contains(&target) {
                continue;
            }
            if op == "SCAN" || !line.contains(&format!("USING COVERING INDEX {COVERING_INDEX} ")) {
                return Ok(false);
            }
            searched = true;
        }
        Ok(searched)
    }

    /// Refreshes planner statistics.
    pub fn analyze(&self) -> StoreResult<()> {
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        self.conn()?.execute_batch("ANALYZE")?;
        Ok(())
    }

    /// Benchmark fixture: replaces the covering index with a non-covering
    /// index on `payload_list_id` alone, so every resolution walks whole lists
    /// through table lookups. [`ConditionsStore::migrate`] repairs it.
    pub fn degrade_covering_index(&self) -> StoreResult<()> {
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        self.conn()?.execute_batch(&format!(
            "DROP INDEX IF EXISTS {COVERING_INDEX};
             CREATE INDEX {COVERING_INDEX} ON {IOV_TABLE} (payload_list_id);"
        ))?;
        Ok(())
    }

    fn resolve_optimized(&self, conn: &Connection, tag: &str, point: IovPoint) -> StoreResult<Vec<ResolutionResult>> {
        let mut stmt = conn.prepare_cached(RESOLVE_OPTIMIZED)?;
        let rows = stmt
            .query_map(params![tag, point.combined().to_ordered_i64()], |r| {
                Ok(ResolutionResult {
                    payload_type: r.get(0)?,
                    payload_iov: iov_from_row(r, 1)?,
                })
            })?
            .collect::<Result<Vec<_>, _>>()?;
        if rows.is_empty() {
            // Distinguish an empty answer from an unknown tag.
            fetch_tag(conn, tag)?;
        }
        Ok(rows)
    }

    // Mirrors an ORM access pattern: every statement is compiled on use and
    // each list costs separate round trips for its type and its IoV.
    fn resolve_naive(&self, conn: &Connection, tag: &str, point: IovPoint) -> StoreResult<Vec<ResolutionResult>> {
        fetch_tag(conn, tag)?;
        let lists: Vec<(i64, i64)> = conn
            .prepare(NAIVE_LISTS)?
            .query_map([tag], |r| Ok((r.get(0)?, r.get(1)?)))?
            .collect::<Result<_, _>>()?;
        let bound = point.combined().to_ordered_i64();
        let mut out = Vec::with_capacity(lists.len());
        for (list_id, type_id) in lists {
            let type_name: String = conn.prepare(NAIVE_TYPE_NAME)?.query_row([type_id], |r| r.get(0))?;
            let hit = conn
                .prepare(NAIVE_LOOKUP)?
                .query_row(params![list_id, bound], |r| iov_from_row(r, 0))
                .optional()?;
            if let Some(payload_iov) = hit {
                out.push(ResolutionResult {
                    payload_type: type_name,
                    payload_iov,
                });
            }
        }
        out.sort_by(|a, b| a.payload_type.cmp(&b.payload_type));
        Ok(out)
    }

    fn existing_start(tx: &Connection, list_id: i64, combined: CombinedIov) -> StoreResult<IovPoint> {
        let (major, minor): (i64, i64) = tx
            .prepare_cached(
                "SELECT major_iov, minor_iov FROM payload_iov WHERE payload_list_id = ?1 AND combined_iov = ?2",
            )?
            .query_row(params![list_id, combined.to_ordered_i64()], |r| Ok((r.get(0)?, r.get(1)?)))?;
        Ok(IovPoint::new(major as u32, minor as u32))
    }

    fn insert_rows(
        tx: &Connection,
        list_id: i64,
        label: &str,
        iovs: Vec<NewPayloadIov>,
        now: Timestamp,
    ) -> StoreResult<Vec<PayloadIov>> {
        let mut stmt = tx.prepare_cached(INSERT_IOV)?;
        let mut out = Vec::with_capacity(iovs.len());
        for iov in iovs {
            iov.validate()?;
            let combined = iov.start.combined();
            let stored = iov.stamp(now);
            let res = stmt.execute(params![
                list_id,
                stored.payload_url,
                stored.checksum.as_str(),
                stored.size_bytes as i64,
                stored.major_iov as i64,
                stored.minor_iov as i64,
                combined.to_ordered_i64(),
                now.as_micros(),
            ]);
            match res {
                Ok(_) => out.push(stored),
                Err(e) if is_unique_violation(&e) => {
                    return Err(StoreError::DuplicateStart {
                        list: label.to_owned(),
                        existing: Self::existing_start(tx, list_id, combined)?,
                    })
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(out)
    }

    fn count(conn: &Connection, table: &str) -> StoreResult<u64> {
        let n: i64 = conn.query_row(&format!("SELECT COUNT(*) FROM {table}"), [], |r| r.get(0))?;
        Ok(n as u64)
    }
}

impl ConditionsStore for SqliteStore {
    fn migrate(&self) -> StoreResult<()> {
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let mut conn = self.conn()?;
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let has_meta: bool = tx.query_row(
            "SELECT EXISTS(SELECT 1 FROM sqlite_master WHERE type = 'table' AND name = 'schema_meta')",
            [],
            |r| r.get(0),
        )?;
        if has_meta {
            let version: Option<String> = tx
                .query_row("SELECT value FROM schema_meta WHERE key = 'schema_version'", [], |r| r.get(0))
                .optional()?;
            match version.as_deref().and_then(|v| v.parse::<u32>().ok()) {
                Some(SCHEMA_VERSION) => {}
                other => {
                    return Err(StoreError::SchemaConflict(format!(
                        "database has schema version {other:?}, expected {SCHEMA_VERSION}"
                    )))
                }
            }
        } else {
            let mut stmt = tx.prepare("SELECT name FROM sqlite_master WHERE type = 'table'")?;
            let existing: Vec<String> = stmt.query_map([], |r| r.get(0))?.collect::<Result<_, _>>()?;
            drop(stmt);
            if let Some(t) = existing.iter().find(|t| ENTITY_TABLES.contains(&t.as_str())) {
                return Err(StoreError::SchemaConflict(format!(
                    "table {t:?} exists but the database carries no schema version"
                )));
            }
            tx.execute_batch(
                "CREATE TABLE schema_meta (key TEXT PRIMARY KEY, value TEXT NOT NULL);",
            )?;
            tx.execute(
                "INSERT INTO schema_meta (key, value) VALUES ('schema_version', ?1)",
                [SCHEMA_VERSION.to_string()],
            )?;
        }
        let covering_columns: i64 = tx.query_row(
            &format!("SELECT COUNT(*) FROM pragma_index_info('{COVERING_INDEX}')"),
            [],
            |r| r.get(0),
        )?;
        if covering_columns != 0 && covering_columns != COVERING_INDEX_COLUMNS {
            tx.execute_batch(&format!("DROP INDEX {COVERING_INDEX};"))?;
        }
        tx.execute_batch(SCHEMA)?;
        tx.commit()?;
        Ok(())
    }

    fn create_global_tag(&self, name: &str) -> StoreResult<GlobalTag> {
        validate_name("global tag", name)?;
        let now = self.clock.now();
        self.write(|tx| {
            let res = tx.execute(
                "INSERT INTO global_tag (name, status_id, created_at)
                 VALUES (?1, (SELECT id FROM global_tag_status WHERE name = 'unlocked'), ?2)",
                params![name, now.as_micros()],
            );
            match res {
                Ok(_) => Ok(GlobalTag {
                    name: name.to_owned(),
                    status: GlobalTagStatus::Unlocked,
                    created_at: now,
                }),
                Err(e) if is_unique_violation(&e) => Err(StoreError::AlreadyExists {
                    kind: EntityKind::GlobalTag,
                    name: name.to_owned(),
                }),
                Err(e) => Err(e.into()),
            }
        })
    }

    fn set_global_tag_status(&self, name: &str, status: GlobalTagStatus) -> StoreResult<GlobalTag> {
        self.write(|tx| {
            let changed = tx.execute(
                "UPDATE global_tag SET status_id = (SELECT id FROM global_tag_status WHERE name = ?1)
                 WHERE name = ?2",
                params![status.as_str(), name],
            )?;
            if changed == 0 {
                return Err(StoreError::NotFound {
                    kind: EntityKind::GlobalTag,
                    name: name.to_owned(),
                });
            }
            Ok(fetch_tag(tx, name)?.tag)
        })
    }

    fn create_payload_type(&self, name: &str) -> StoreResult<PayloadType> {
        validate_name("payload type", name)?;
        let now = self.clock.now();
        self.write(|tx| {
            match tx.execute(
                "INSERT INTO payload_type (name, created_at) VALUES (?1, ?2)",
                params![name, now.as_micros()],
            ) {
                Ok(_) => Ok(PayloadType { name: name.to_owned() }),
                Err(e) if is_unique_violation(&e) => Err(StoreError::AlreadyExists {
                    kind: EntityKind::PayloadType,
                    name: name.to_owned(),
                }),
                Err(e) => Err(e.into()),
            }
        })
    }

    fn attach_payload_list(&self, tag: &str, payload_type: &str) -> StoreResult<PayloadList> {
        let now = self.clock.now();
        self.write(|tx| {
            let tag_row = fetch_tag(tx, tag)?;
            if tag_row.tag.status.is_locked() {
                return Err(StoreError::Locked(tag.to_owned()));
            }
            let type_id = fetch_type_id(tx, payload_type)?;
            match tx.execute(
                "INSERT INTO payload_list (global_tag_id, payload_type_id, created_at) VALUES (?1, ?2, ?3)",
                params![tag_row.id, type_id, now.as_micros()],
            ) {
                Ok(_) => Ok(PayloadList {
                    id: tx.last_insert_rowid(),
                    global_tag: tag.to_owned(),
                    payload_type: payload_type.to_owned(),
                }),
                Err(e) if is_unique_violation(&e) => Err(StoreError::AlreadyExists {
                    kind: EntityKind::PayloadList,
                    name: list_label(tag, payload_type),
                }),
                Err(e) => Err(e.into()),
            }
        })
    }

    fn insert_payload_iov(&self, tag: &str, payload_type: &str, iov: NewPayloadIov) -> StoreResult<PayloadIov> {
        iov.validate()?;
        let now = self.clock.now();
        self.write(|tx| {
            let list_id = writable_list_id(tx, tag, payload_type)?;
            let mut rows = Self::insert_rows(tx, list_id, &list_label(tag, payload_type), vec![iov], now)?;
            Ok(rows.remove(0))
        })
    }

    fn insert_payload_iovs_bulk(&self, tag: &str, payload_type: &str, iovs: Vec<NewPayloadIov>) -> StoreResult<usize> {
        let now = self.clock.now();
        self.write(|tx| {
            let list_id = writable_list_id(tx, tag, payload_type)?;
            Ok(Self::insert_rows(tx, list_id, &list_label(tag, payload_type), iovs, now)?.len())
        })
    }

    fn resolve_payload_iovs(
        &self,
        tag: &str,
        point: IovPoint,
        strategy: ResolutionStrategy,
    ) -> StoreResult<Vec<ResolutionResult>> {
        let conn = self.conn()?;
        match strategy {
            ResolutionStrategy::OptimizedSingleQuery => self.resolve_optimized(&conn, tag, point),
            ResolutionStrategy::NaivePerType => self.resolve_naive(&conn, tag, point),
        }
    }

    fn list_global_tags(&self) -> StoreResult<Vec<GlobalTag>> {
        let conn = self.conn()?;
        let mut stmt = conn.prepare_cached(
            "SELECT gt.name, s.name, gt.created_at FROM global_tag gt
             JOIN global_tag_status s ON s.id = gt.status_id ORDER BY gt.name",
        )?;
        let rows = stmt
            .query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?, r.get::<_, i64>(2)?)))?
            .collect::<Result<Vec<_>, _>>()?;
        rows.into_iter()
            .map(|(name, status, created_at)| {
                Ok(GlobalTag {
                    name,
                    status: status_from_db(&status)?,
                    created_at: Timestamp::from_micros(created_at),
                })
            })
            .collect()
    }

    fn list_payload_types(&self) -> StoreResult<Vec<PayloadType>> {
        let conn = self.conn()?;
        let mut stmt = conn.prepare_cached("SELECT name FROM payload_type ORDER BY name")?;
        let rows = stmt
            .query_map([], |r| Ok(PayloadType { name: r.get(0)? }))?
            .collect::<Result<Vec<_>, _>>()?;
        Ok(rows)
    }

    fn describe_global_tag(&self, name: &str) -> StoreResult<GlobalTagDescription> {
        let conn = self.conn()?;
        let tag_row = fetch_tag(&conn, name)?;
        let mut stmt = conn.prepare_cached(
            "SELECT pl.id, pt.name, (SELECT COUNT(*) FROM payload_iov i WHERE i.payload_list_id = pl.id)
             FROM payload_list pl JOIN payload_type pt ON pt.id = pl.payload_type_id
             WHERE pl.global_tag_id = ?1 ORDER BY pt.name",
        )?;
        let payload_lists = stmt
            .query_map([tag_row.id], |r| {
                Ok(PayloadListSummary {
                    id: r.get(0)?,
                    payload_type: r.get(1)?,
                    iov_count: r.get::<_, i64>(2)? as u64,
                })
            })?
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GlobalTagDescription {
            name: tag_row.tag.name,
            status: tag_row.tag.status,
            created_at: tag_row.tag.created_at,
            payload_lists,
        })
    }

    fn list_payload_iovs(&self, tag: &str, payload_type: &str) -> StoreResult<Vec<PayloadIov>> {
        let conn = self.conn()?;
        let tag_row = fetch_tag(&conn, tag)?;
        let type_id = fetch_type_id(&conn, payload_type)?;
        let list_id: i64 = conn
            .prepare_cached("SELECT id FROM payload_list WHERE global_tag_id = ?1 AND payload_type_id = ?2")?
            .query_row(params![tag_row.id, type_id], |r| r.get(0))
            .optional()?
            .ok_or_else(|| StoreError::NotFound {
                kind: EntityKind::PayloadList,
                name: list_label(tag, payload_type),
            })?;
        let mut stmt = conn.prepare_cached(
            "SELECT payload_url, checksum, size_bytes, major_iov, minor_iov, inserted_at
             FROM payload_iov WHERE payload_list_id = ?1 ORDER BY combined_iov",
        )?;
        let rows = stmt
            .query_map([list_id], |r| iov_from_row(r, 0))?
            .collect::<Result<Vec<_>, _>>()?;
        Ok(rows)
    }

    fn payload_urls(&self) -> StoreResult<Vec<String>> {
        let conn = self.conn()?;
        let mut stmt = conn.prepare_cached("SELECT DISTINCT payload_url FROM payload_iov ORDER BY payload_url")?;
        let rows = stmt.query_map([], |r| r.get(0))?.collect::<Result<Vec<_>, _>>()?;
        Ok(rows)
    }

    fn health(&self) -> StoreResult<HealthReport> {
        if !self.path.exists() {
            return Err(StoreError::Unavailable(format!(
                "database file {} is missing",
                self.path.display()
            )));
        }
        let conn = self.conn()?;
        let version: String = conn
            .query_row("SELECT value FROM schema_meta WHERE key = 'schema_version'", [], |r| r.get(0))
            .map_err(|e| StoreError::Unavailable(e.to_string()))?;
        Ok(HealthReport {
            schema_version: version.parse().map_err(|_| StoreError::SchemaConflict(version.clone()))?,
            row_counts: RowCounts {
                global_tags: Self::count(&conn, "global_tag")?,
                payload_types: Self::count(&conn, "payload_type")?,
                payload_lists: Self::count(&conn, "payload_list")?,
                payload_iovs: Self::count(&conn, "payload_iov")?,
            },
        })
    }
}
