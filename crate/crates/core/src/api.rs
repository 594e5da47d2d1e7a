//! Transport-independent request handling.
//!
//! Every REST operation is an [`ApiRequest`]; [`handle`] executes it against a
//! [`ConditionsStore`] and produces the exact status code and JSON body that
//! goes on the wire. The HTTP service and the client's fake backend both go
//! through here, which is what keeps their responses byte-identical.

use serde::{Deserialize, Serialize};

use crate::domain::{Checksum, GlobalTagStatus, NewPayloadIov};
use crate::error::{DomainError, EntityKind, StoreError};
use crate::iov::IovPoint;
use crate::store::{ConditionsStore, ResolutionStrategy, RowCounts};

/// Version of the JSON wire schema described in `docs/wire-schema.md`.
pub const WIRE_SCHEMA_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateGlobalTagBody {
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetStatusBody {
    pub status: GlobalTagStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreatePayloadTypeBody {
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttachPayloadListBody {
    pub global_tag: String,
    pub payload_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsertPayloadIovBody {
    pub global_tag: String,
    pub payload_type: String,
    pub payload_url: String,
    pub checksum: String,
    pub size: u64,
    pub major_iov: u64,
    pub minor_iov: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ApiRequest {
    ListGlobalTags,
    CreateGlobalTag(CreateGlobalTagBody),
    SetGlobalTagStatus { name: String, body: SetStatusBody },
    DescribeGlobalTag { name: String },
    CreatePayloadType(CreatePayloadTypeBody),
    ListPayloadTypes,
    AttachPayloadList(AttachPayloadListBody),
    InsertPayloadIov(InsertPayloadIovBody),
    ResolvePayloadIovs {
        global_tag: String,
        major_iov: u64,
        minor_iov: u64,
        strategy: Option<ResolutionStrategy>,
    },
    ListPayloadIovs { global_tag: String, payload_type: String },
    PayloadUrls,
    Health,
}

impl ApiRequest {
    pub fn is_mutation(&self) -> bool {
        matches!(
            self,
            ApiRequest::CreateGlobalTag(_)
                | ApiRequest::SetGlobalTagStatus { .. }
                | ApiRequest::CreatePayloadType(_)
                | ApiRequest::AttachPayloadList(_)
                | ApiRequest::InsertPayloadIov(_)
        )
    }

    /// Parses the query string parameters of the resolution route
    /// (`gtName`, `majorIOV`, `minorIOV`, optional `strategy`).
    pub fn resolve_from_query<'a>(
        params: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<ApiRequest, ApiError> {
        let (mut tag, mut major, mut minor, mut strategy) = (None, None, None, None);
        for (k, v) in params {
            match k {
                "gtName" => tag = Some(v.to_owned()),
                "majorIOV" => major = Some(parse_iov_param("majorIOV", v)?),
                "minorIOV" => minor = Some(parse_iov_param("minorIOV", v)?),
                "strategy" => {
                    strategy = Some(v.parse::<ResolutionStrategy>().map_err(|e| {
                        ApiError::new(400, "invalid_strategy", e)
                    })?)
                }
                _ => {}
            }
        }
        let missing = |p: &str| ApiError::new(400, "bad_request", format!("missing query parameter {p}"));
        Ok(ApiRequest::ResolvePayloadIovs {
            global_tag: tag.ok_or_else(|| missing("gtName"))?,
            major_iov: major.ok_or_else(|| missing("majorIOV"))?,
            minor_iov: minor.ok_or_else(|| missing("minorIOV"))?,
            strategy,
        })
    }
}

fn parse_iov_param(name: &str, raw: &str) -> Result<u64, ApiError> {
    raw.parse::<u64>().map_err(|_| {
        ApiError::new(
            400,
            "invalid_iov",
            format!("{name} must be an unsigned integer, got {raw:?}"),
        )
    })
}

/// Server behaviour switches that affect request handling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ApiPolicy {
    /// Reject every mutating request with 403.
    pub read_only: bool,
    /// Honour the `strategy` parameter of the resolution route.
    pub benchmark_mode: bool,
    pub default_strategy: ResolutionStrategy,
}

impl Default for ApiPolicy {
    fn default() -> Self {
        Self {
            read_only: false,
            benchmark_mode: false,
            default_strategy: ResolutionStrategy::OptimizedSingleQuery,
        }
    }
}

/// Error document returned for every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub http_status: u16,
    pub code: String,
    pub detail: String,
}

impl ApiError {
    pub fn new(http_status: u16, code: &str, detail: impl Into<String>) -> Self {
        Self {
            http_status,
            code: code.to_owned(),
            detail: detail.into(),
        }
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}: {}", self.http_status, self.code, self.detail)
    }
}

impl std::error::Error for ApiError {}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let detail = e.to_string();
        let (status, code) = match &e {
            StoreError::Validation(d) => match d {
                DomainError::IovOutOfRange { .. } => (400, "invalid_iov"),
                DomainError::InvalidName { .. } => (400, "invalid_name"),
                DomainError::InvalidChecksum { .. } => (400, "invalid_checksum"),
                DomainError::InvalidPayloadUrl { .. } => (400, "invalid_payload_url"),
                DomainError::OverlappingStart { .. } => (409, "duplicate_iov_start"),
            },
            StoreError::NotFound { kind, .. } => (
                404,
                match kind {
                    EntityKind::GlobalTag => "global_tag_not_found",
                    EntityKind::PayloadType => "payload_type_not_found",
                    EntityKind::PayloadList => "payload_list_not_found",
                },
            ),
            StoreError::AlreadyExists { kind, .. } => (
                409,
                match kind {
                    EntityKind::GlobalTag => "global_tag_exists",
                    EntityKind::PayloadType => "payload_type_exists",
                    EntityKind::PayloadList => "payload_list_exists",
                },
            ),
            StoreError::DuplicateStart { .. } => (409, "duplicate_iov_start"),
            StoreError::Locked(_) => (423, "global_tag_locked"),
            StoreError::SchemaConflict(_) => (500, "schema_conflict"),
            StoreError::Unavailable(_) => (503, "store_unavailable"),
            StoreError::Backend(_) => (500, "internal_error"),
        };
        ApiError::new(status, code, detail)
    }
}

impl From<DomainError> for ApiError {
    fn from(e: DomainError) -> Self {
        StoreError::from(e).into()
    }
}

/// Status code plus serialized JSON body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

impl ApiResponse {
    pub fn json<T: Serialize>(status: u16, value: &T) -> Self {
        Self {
            status,
            body: serde_json::to_vec(value).expect("wire types always serialize"),
        }
    }

    pub fn error(err: &ApiError) -> Self {
        Self::json(err.http_status, err)
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    /// Decodes a success body, or the error document for any other status.
    pub fn decode<T: serde::de::DeserializeOwned>(&self) -> Result<T, ApiError> {
        if self.is_success() {
            serde_json::from_slice(&self.body).map_err(|e| {
                ApiError::new(self.status, "malformed_response", e.to_string())
            })
        } else {
            let mut err: ApiError = serde_json::from_slice(&self.body).unwrap_or_else(|_| {
                ApiError::new(
                    self.status,
                    "unexpected_response",
                    String::from_utf8_lossy(&self.body).into_owned(),
                )
            });
            err.http_status = self.status;
            Err(err)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthDocument {
    pub status: String,
    pub schema_version: u32,
    pub row_counts: RowCounts,
}

/// Executes one request. Never panics on bad input; every failure becomes an
/// error document.
pub fn handle(store: &dyn ConditionsStore, policy: &ApiPolicy, request: ApiRequest) -> ApiResponse {
    match execute(store, policy, request) {
        Ok(resp) => resp,
        Err(err) => ApiResponse::error(&err),
    }
}

fn execute(store: &dyn ConditionsStore, policy: &ApiPolicy, request: ApiRequest) -> Result<ApiResponse, ApiError> {
    if policy.read_only && request.is_mutation() {
        return Err(ApiError::new(403, "read_only", "the service is running in read-only mode"));
    }
    let resp = match request {
        ApiRequest::ListGlobalTags => ApiResponse::json(200, &store.list_global_tags()?),
        ApiRequest::CreateGlobalTag(body) => ApiResponse::json(201, &store.create_global_tag(&body.name)?),
        ApiRequest::SetGlobalTagStatus { name, body } => {
            ApiResponse::json(200, &store.set_global_tag_status(&name, body.status)?)
        }
        ApiRequest::DescribeGlobalTag { name } => ApiResponse::json(200, &store.describe_global_tag(&name)?),
        ApiRequest::CreatePayloadType(body) => ApiResponse::json(201, &store.create_payload_type(&body.name)?),
        ApiRequest::ListPayloadTypes => ApiResponse::json(200, &store.list_payload_types()?),
        ApiRequest::AttachPayloadList(body) => ApiResponse::json(
            201,
            &store.attach_payload_list(&body.global_tag, &body.payload_type)?,
        ),
        ApiRequest::InsertPayloadIov(body) => {
            let start = IovPoint::try_new(body.major_iov, body.minor_iov)?;
            let iov = NewPayloadIov {
                payload_url: body.payload_url,
                checksum: Checksum::parse(&body.checksum)?,
                size_bytes: body.size,
                start,
            };
            ApiResponse::json(201, &store.insert_payload_iov(&body.global_tag, &body.payload_type, iov)?)
        }
        ApiRequest::ResolvePayloadIovs {
            global_tag,
            major_iov,
            minor_iov,
            strategy,
        } => {
            let point = IovPoint::try_new(major_iov, minor_iov)?;
            let strategy = match strategy {
                Some(_) if !policy.benchmark_mode => {
                    return Err(ApiError::new(
                        400,
                        "strategy_not_allowed",
                        "the strategy parameter is only accepted in benchmark mode",
                    ))
                }
                Some(s) => s,
                None => policy.default_strategy,
            };
            ApiResponse::json(200, &store.resolve_payload_iovs(&global_tag, point, strategy)?)
        }
        ApiRequest::ListPayloadIovs {
            global_tag,
            payload_type,
        } => ApiResponse::json(200, &store.list_payload_iovs(&global_tag, &payload_type)?),
        ApiRequest::PayloadUrls => ApiResponse::json(200, &store.payload_urls()?),
        ApiRequest::Health => {
            let report = store.health().map_err(|e| ApiError::new(503, "store_unavailable", e.to_string()))?;
            ApiResponse::json(
                200,
                &HealthDocument {
                    status: "ok".into(),
                    schema_version: report.schema_version,
                    row_counts: report.row_counts,
                },
            )
        }
    };
    Ok(resp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{FixedClock, Timestamp};
    use crate::store::MemoryStore;
    use std::sync::Arc;

    fn store() -> MemoryStore {
        MemoryStore::with_clock(Arc::new(FixedClock(Timestamp::from_micros(1_700_000_000_000_000))))
    }

    fn insert(tag: &str, ty: &str, major: u64) -> ApiRequest {
        ApiRequest::InsertPayloadIov(InsertPayloadIovBody {
            global_tag: tag.into(),
            payload_type: ty.into(),
            payload_url: format!("aa/bb/{major}"),
            checksum: "a".repeat(64),
            size: 3,
            major_iov: major,
            minor_iov: 0,
        })
    }

    fn resolve(tag: &str, major: u64, minor: u64) -> ApiRequest {
        ApiRequest::ResolvePayloadIovs {
            global_tag: tag.into(),
            major_iov: major,
            minor_iov: minor,
            strategy: None,
        }
    }

    fn setup(s: &MemoryStore, p: &ApiPolicy) {
        for req in [
            ApiRequest::CreateGlobalTag(CreateGlobalTagBody { name: "gt".into() }),
            ApiRequest::CreatePayloadType(CreatePayloadTypeBody { name: "emcal".into() }),
            ApiRequest::AttachPayloadList(AttachPayloadListBody {
                global_tag: "gt".into(),
                payload_type: "emcal".into(),
            }),
        ] {
            assert_eq!(handle(s, p, req).status, 201);
        }
    }

    #[test]
    fn resolve_empty_tag_is_empty_array() {
        let (s, p) = (store(), ApiPolicy::default());
        setup(&s, &p);
        let resp = handle(&s, &p, resolve("gt", 7, 3));
        assert_eq!(resp.status, 200);
        assert_eq!(resp.body, b"[]");
    }

    #[test]
    fn resolve_picks_start_five() {
        let (s, p) = (store(), ApiPolicy::default());
        setup(&s, &p);
        for m in [1, 5, 10] {
            assert_eq!(handle(&s, &p, insert("gt", "emcal", m)).status, 201);
        }
        let resp = handle(&s, &p, resolve("gt", 7, 3));
        assert_eq!(
            String::from_utf8(resp.body).unwrap(),
            concat!(
                r#"[{"payload_type":"emcal","payload_iov":{"payload_url":"aa/bb/5","checksum":""#,
                "aaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaa",
                r#"","size":3,"major_iov":5,"minor_iov":0,"inserted_at":"2023-11-14T22:13:20.000000Z"}}]"#
            )
        );
    }

    #[test]
    fn error_mapping() {
        let (s, p) = (store(), ApiPolicy::default());
        setup(&s, &p);
        let r = handle(&s, &p, resolve("nope", 1, 1));
        assert_eq!(r.status, 404);
        assert_eq!(r.decode::<()>().unwrap_err().code, "global_tag_not_found");

        let r = handle(&s, &p, resolve("gt", 1 << 32, 0));
        assert_eq!(r.decode::<()>().unwrap_err().code, "invalid_iov");
        assert_eq!(r.status, 400);

        assert_eq!(handle(&s, &p, insert("gt", "emcal", 4)).status, 201);
        let dup = handle(&s, &p, insert("gt", "emcal", 4));
        assert_eq!(dup.status, 409);
        let err = dup.decode::<()>().unwrap_err();
        assert_eq!(err.code, "duplicate_iov_start");
        assert!(err.detail.contains("(4, 0)"));

        let lock = ApiRequest::SetGlobalTagStatus {
            name: "gt".into(),
            body: SetStatusBody { status: GlobalTagStatus::Locked },
        };
        assert_eq!(handle(&s, &p, lock).status, 200);
        let r = handle(&s, &p, insert("gt", "emcal", 9));
        assert_eq!(r.status, 423);
        assert_eq!(r.decode::<()>().unwrap_err().code, "global_tag_locked");
    }

    #[test]
    fn strategy_requires_benchmark_mode() {
        let s = store();
        let prod = ApiPolicy::default();
        setup(&s, &prod);
        let req = ApiRequest::ResolvePayloadIovs {
            global_tag: "gt".into(),
            major_iov: 1,
            minor_iov: 0,
            strategy: Some(ResolutionStrategy::NaivePerType),
        };
        let r = handle(&s, &prod, req.clone());
        assert_eq!(r.status, 400);
        assert_eq!(r.decode::<()>().unwrap_err().code, "strategy_not_allowed");
        let bench = ApiPolicy {
            benchmark_mode: true,
            ..prod
        };
        assert_eq!(handle(&s, &bench, req).status, 200);
    }

    #[test]
    fn read_only_blocks_mutations_only() {
        let s = store();
        let p = ApiPolicy {
            read_only: true,
            ..ApiPolicy::default()
        };
        let r = handle(&s, &p, ApiRequest::CreateGlobalTag(CreateGlobalTagBody { name: "x".into() }));
        assert_eq!(r.status, 403);
        assert_eq!(handle(&s, &p, ApiRequest::ListGlobalTags).status, 200);
    }

    #[test]
    fn query_parsing() {
        let ok = ApiRequest::resolve_from_query([("gtName", "gt"), ("majorIOV", "7"), ("minorIOV", "3")]).unwrap();
        assert_eq!(ok, resolve("gt", 7, 3));
        let bad = ApiRequest::resolve_from_query([("gtName", "gt"), ("majorIOV", "-1"), ("minorIOV", "3")]);
        assert_eq!(bad.unwrap_err().code, "invalid_iov");
        let missing = ApiRequest::resolve_from_query([("gtName", "gt")]);
        assert_eq!(missing.unwrap_err().http_status, 400);
    }

    #[test]
    fn health_on_fresh_store() {
        let s = store();
        let r = handle(&s, &ApiPolicy::default(), ApiRequest::Health);
        assert_eq!(r.status, 200);
        let doc: HealthDocument = r.decode().unwrap();
        assert_eq!(doc.row_counts, RowCounts::default());
    }
}
