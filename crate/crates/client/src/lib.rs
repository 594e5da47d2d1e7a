//! Client library for the conditions database.
//!
//! [`Client`] wraps a [`Transport`] (HTTP or an in-process fake) with typed
//! calls, a time-bounded resolution cache, local overrides, content-addressed
//! payload storage and the insertion protocol.

mod audit;
pub mod config;
pub mod conformance;
mod error;
mod insert;
pub mod payload;
pub mod transport;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::de::DeserializeOwned;

use condb_core::api::{
    ApiRequest, ApiResponse, AttachPayloadListBody, CreateGlobalTagBody, CreatePayloadTypeBody, HealthDocument,
    InsertPayloadIovBody, SetStatusBody,
};
use condb_core::{
    Checksum, GlobalTag, GlobalTagDescription, GlobalTagStatus, IovPoint, PayloadIov, PayloadList, PayloadType,
    ResolutionResult,
};

pub use audit::{AuditReport, OrphanFile};
pub use config::ClientConfig;
pub use error::{ClientError, ClientResult};
pub use insert::{FailAt, FaultInjector, InsertOutcome, InsertStep};
pub use payload::{compute_checksum, derive_payload_path};
pub use transport::{FakeTransport, HttpTransport, Transport};

type CacheKey = (String, u32, u32);

/// A payload located on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PayloadHandle {
    pub path: PathBuf,
    /// Checksum from the metadata; `None` for an override.
    pub checksum: Option<Checksum>,
    pub size: Option<u64>,
    /// True iff verification was requested and the file digest matched.
    pub verified: bool,
    pub from_override: bool,
}

pub struct Client {
    config: ClientConfig,
    transport: Arc<dyn Transport>,
    cache: Mutex<HashMap<CacheKey, (Instant, Arc<Vec<ResolutionResult>>)>>,
    requests: AtomicU64,
    faults: Option<Arc<dyn FaultInjector>>,
}

const CACHE_SWEEP_THRESHOLD: usize = 4096;

impl Client {
    /// Builds a client for the backend named in `config`.
    pub fn new(config: ClientConfig) -> ClientResult<Self> {
        config.validate()?;
        let transport: Arc<dyn Transport> = if config.use_fake_backend {
            Arc::new(FakeTransport::new())
        } else {
            Arc::new(HttpTransport::new(&config.base_url, config.request_timeout())?)
        };
        Ok(Self::with_transport(config, transport))
    }

    pub fn with_transport(config: ClientConfig, transport: Arc<dyn Transport>) -> Self {
        Self {
            config,
            transport,
            cache: Mutex::new(HashMap::new()),
            requests: AtomicU64::new(0),
            faults: None,
        }
    }

    pub fn with_fault_injector(mut self, faults: Arc<dyn FaultInjector>) -> Self {
        self.faults = Some(faults);
        self
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    /// Requests sent through this client so far.
    pub fn request_count(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn send(&self, request: &ApiRequest) -> ClientResult<ApiResponse> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        self.transport.send(request)
    }

    fn call<T: DeserializeOwned>(&self, request: ApiRequest) -> ClientResult<T> {
        Ok(self.send(&request)?.decode()?)
    }

    pub fn health(&self) -> ClientResult<HealthDocument> {
        self.call(ApiRequest::Health)
    }

    pub fn list_global_tags(&self) -> ClientResult<Vec<GlobalTag>> {
        self.call(ApiRequest::ListGlobalTags)
    }

    pub fn create_global_tag(&self, name: &str) -> ClientResult<GlobalTag> {
        self.call(ApiRequest::CreateGlobalTag(CreateGlobalTagBody { name: name.into() }))
    }

    pub fn set_global_tag_status(&self, name: &str, status: GlobalTagStatus) -> ClientResult<GlobalTag> {
        self.call(ApiRequest::SetGlobalTagStatus {
            name: name.into(),
            body: SetStatusBody { status },
        })
    }

    pub fn describe_global_tag(&self, name: &str) -> ClientResult<GlobalTagDescription> {
        self.call(ApiRequest::DescribeGlobalTag { name: name.into() })
    }

    pub fn list_payload_types(&self) -> ClientResult<Vec<PayloadType>> {
        self.call(ApiRequest::ListPayloadTypes)
    }

    pub fn create_payload_type(&self, name: &str) -> ClientResult<PayloadType> {
        self.call(ApiRequest::CreatePayloadType(CreatePayloadTypeBody { name: name.into() }))
    }

    pub fn attach_payload_list(&self, global_tag: &str, payload_type: &str) -> ClientResult<PayloadList> {
        self.call(ApiRequest::AttachPayloadList(AttachPayloadListBody {
            global_tag: global_tag.into(),
            payload_type: payload_type.into(),
        }))
    }

    pub fn list_payload_iovs(&self, global_tag: &str, payload_type: &str) -> ClientResult<Vec<PayloadIov>> {
        self.call(ApiRequest::ListPayloadIovs {
            global_tag: global_tag.into(),
            payload_type: payload_type.into(),
        })
    }

    pub fn payload_urls(&self) -> ClientResult<Vec<String>> {
        self.call(ApiRequest::PayloadUrls)
    }

    /// Registers metadata only; the payload file is assumed to be in place.
    pub fn insert_payload_iov(
        &self,
        global_tag: &str,
        payload_type: &str,
        payload_url: &str,
        checksum: &Checksum,
        size: u64,
        start: IovPoint,
    ) -> ClientResult<PayloadIov> {
        self.call(ApiRequest::InsertPayloadIov(InsertPayloadIovBody {
            global_tag: global_tag.into(),
            payload_type: payload_type.into(),
            payload_url: payload_url.into(),
            checksum: checksum.as_str().into(),
            size,
            major_iov: start.major.into(),
            minor_iov: start.minor.into(),
        }))
    }

    fn resolve_uncached(&self, global_tag: &str, point: IovPoint) -> ClientResult<Vec<ResolutionResult>> {
        self.call(ApiRequest::ResolvePayloadIovs {
            global_tag: global_tag.into(),
            major_iov: point.major.into(),
            minor_iov: point.minor.into(),
            strategy: None,
        })
    }

    /// Payloads of every type valid at (`major`, `minor`). Answers are cached
    /// for `cache_ttl_secs`.
    pub fn resolve(&self, global_tag: &str, major: u64, minor: u64) -> ClientResult<Arc<Vec<ResolutionResult>>> {
        let point = IovPoint::try_new(major, minor).map_err(|e| ClientError::Api(e.into()))?;
        let ttl = self.config.cache_ttl();
        if ttl.is_zero() {
            return Ok(Arc::new(self.resolve_uncached(global_tag, point)?));
        }
        let key = (global_tag.to_owned(), point.major, point.minor);
        if let Some((at, hit)) = self.cache.lock().unwrap().get(&key) {
            if at.elapsed() < ttl {
                return Ok(hit.clone());
            }
        }
        let fresh = Arc::new(self.resolve_uncached(global_tag, point)?);
        let mut cache = self.cache.lock().unwrap();
        if cache.len() >= CACHE_SWEEP_THRESHOLD {
            cache.retain(|_, (at, _)| at.elapsed() < ttl);
        }
        cache.insert(key, (Instant::now(), fresh.clone()));
        Ok(fresh)
    }

    pub fn clear_cache(&self) {
        self.cache.lock().unwrap().clear();
    }

    /// Local path of the payload of `payload_type` valid at (`major`, `minor`).
    /// An entry in the override map wins without contacting the service.
    pub fn get_payload_url(&self, global_tag: &str, payload_type: &str, major: u64, minor: u64) -> ClientResult<PathBuf> {
        if let Some(path) = self.config.override_map.get(payload_type) {
            return Ok(path.clone());
        }
        let iov = self.lookup(global_tag, payload_type, major, minor)?;
        self.read_path(&iov.payload_url)
    }

    fn read_path(&self, payload_url: &str) -> ClientResult<PathBuf> {
        let joined = self.config.read_dir_prefix.join(payload_url);
        std::path::absolute(&joined).map_err(|e| ClientError::io(format!("resolving {}", joined.display()), e))
    }

    fn lookup(&self, global_tag: &str, payload_type: &str, major: u64, minor: u64) -> ClientResult<PayloadIov> {
        let results = self.resolve(global_tag, major, minor)?;
        results
            .iter()
            .find(|r| r.payload_type == payload_type)
            .map(|r| r.payload_iov.clone())
            .ok_or_else(|| ClientError::NoPayload {
                global_tag: global_tag.into(),
                payload_type: payload_type.into(),
                major: major as u32,
                minor: minor as u32,
            })
    }

    /// Like [`Client::get_payload_url`], optionally checking the file against
    /// the metadata checksum. A mismatch is an [`ClientError::Integrity`].
    pub fn fetch_payload(
        &self,
        global_tag: &str,
        payload_type: &str,
        major: u64,
        minor: u64,
        verify: bool,
    ) -> ClientResult<PayloadHandle> {
        if let Some(path) = self.config.override_map.get(payload_type) {
            return Ok(PayloadHandle {
                path: path.clone(),
                checksum: None,
                size: None,
                verified: false,
                from_override: true,
            });
        }
        let iov = self.lookup(global_tag, payload_type, major, minor)?;
        let path = self.read_path(&iov.payload_url)?;
        if verify {
            let (actual, _) = compute_checksum(&path)?;
            if actual != iov.checksum {
                return Err(ClientError::Integrity {
                    path,
                    expected: iov.checksum,
                    actual,
                });
            }
        }
        Ok(PayloadHandle {
            path,
            checksum: Some(iov.checksum),
            size: Some(iov.size_bytes),
            verified: verify,
            from_override: false,
        })
    }
}
