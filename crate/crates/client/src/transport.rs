//! How requests reach a conditions database.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use condb_core::api::{self, ApiPolicy, ApiRequest, ApiResponse};
use condb_core::{ConditionsStore, MemoryStore};
use url::Url;

use crate::error::{ClientError, ClientResult};

pub trait Transport: Send + Sync {
    /// Sends one request. `Err` means no response was obtained at all.
    fn send(&self, request: &ApiRequest) -> ClientResult<ApiResponse>;
}

/// Talks to a running service over HTTP.
pub struct HttpTransport {
    base: Url,
    http: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(base_url: &str, timeout: Duration) -> ClientResult<Self> {
        let mut base = Url::parse(base_url).map_err(|e| ClientError::Config(format!("base_url {base_url:?}: {e}")))?;
        if !base.path().ends_with('/') {
            let p = format!("{}/", base.path());
            base.set_path(&p);
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ClientError::Config(e.to_string()))?;
        Ok(Self { base, http })
    }

    fn url(&self, segments: &[&str], query: &[(&str, String)]) -> Url {
        let mut url = self.base.clone();
        url.path_segments_mut()
            .expect("http base url")
            .pop_if_empty()
            .extend(segments);
        if !query.is_empty() {
            url.query_pairs_mut().extend_pairs(query);
        }
        url
    }
}

fn body<T: serde::Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("request bodies always serialize")
}

impl Transport for HttpTransport {
    fn send(&self, request: &ApiRequest) -> ClientResult<ApiResponse> {
        use reqwest::Method;
        let (method, url, payload) = match request {
            ApiRequest::ListGlobalTags => (Method::GET, self.url(&["api", "globalTags"], &[]), None),
            ApiRequest::CreateGlobalTag(b) => (Method::POST, self.url(&["api", "globalTags"], &[]), Some(body(b))),
            ApiRequest::SetGlobalTagStatus { name, body: b } => (
                Method::PUT,
                self.url(&["api", "globalTags", name, "status"], &[]),
                Some(body(b)),
            ),
            ApiRequest::DescribeGlobalTag { name } => (Method::GET, self.url(&["api", "globalTags", name], &[]), None),
            ApiRequest::CreatePayloadType(b) => (Method::POST, self.url(&["api", "payloadTypes"], &[]), Some(body(b))),
            ApiRequest::ListPayloadTypes => (Method::GET, self.url(&["api", "payloadTypes"], &[]), None),
            ApiRequest::AttachPayloadList(b) => (Method::POST, self.url(&["api", "payloadLists"], &[]), Some(body(b))),
            ApiRequest::InsertPayloadIov(b) => (Method::POST, self.url(&["api", "payloadIOVs"], &[]), Some(body(b))),
            ApiRequest::ResolvePayloadIovs {
                global_tag,
                major_iov,
                minor_iov,
                strategy,
            } => {
                let mut q = vec![
                    ("gtName", global_tag.clone()),
                    ("majorIOV", major_iov.to_string()),
                    ("minorIOV", minor_iov.to_string()),
                ];
                if let Some(s) = strategy {
                    q.push(("strategy", s.as_str().to_owned()));
                }
                (Method::GET, self.url(&["api", "payloadIOVs"], &q), None)
            }
            ApiRequest::ListPayloadIovs {
                global_tag,
                payload_type,
            } => (
                Method::GET,
                self.url(&["api", "globalTags", global_tag, "payloadIOVs", payload_type], &[]),
                None,
            ),
            ApiRequest::PayloadUrls => (Method::GET, self.url(&["api", "payloadUrls"], &[]), None),
            ApiRequest::Health => (Method::GET, self.url(&["healthz"], &[]), None),
        };
        let mut builder = self.http.request(method, url);
        if let Some(b) = payload {
            builder = builder.header(reqwest::header::CONTENT_TYPE, "application/json").body(b);
        }
        let resp = builder.send().map_err(|e| ClientError::Connectivity(error_chain(&e)))?;
        let status = resp.status().as_u16();
        let body = resp.bytes().map_err(|e| ClientError::Connectivity(error_chain(&e)))?;
        Ok(ApiResponse {
            status,
            body: body.to_vec(),
        })
    }
}

fn error_chain(e: &dyn std::error::Error) -> String {
    let mut out = e.to_string();
    let mut cur = e.source();
    while let Some(s) = cur {
        out.push_str(": ");
        out.push_str(&s.to_string());
        cur = s.source();
    }
    out
}

/// In-process database with the service's request semantics, for tests and
/// offline development.
pub struct FakeTransport {
    store: Arc<dyn ConditionsStore>,
    policy: ApiPolicy,
}

impl FakeTransport {
    pub fn new() -> Self {
        Self::with_store(Arc::new(MemoryStore::new()), ApiPolicy::default())
    }

    pub fn with_store(store: Arc<dyn ConditionsStore>, policy: ApiPolicy) -> Self {
        Self { store, policy }
    }
}

impl Default for FakeTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl Transport for FakeTransport {
    fn send(&self, request: &ApiRequest) -> ClientResult<ApiResponse> {
        Ok(api::handle(self.store.as_ref(), &self.policy, request.clone()))
    }
}

/// Counts requests passed to the wrapped transport.
pub struct CountingTransport<T> {
    inner: T,
    count: AtomicU64,
}

impl<T: Transport> CountingTransport<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            count: AtomicU64::new(0),
        }
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

impl<T: Transport> Transport for CountingTransport<T> {
    fn send(&self, request: &ApiRequest) -> ClientResult<ApiResponse> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.send(request)
    }
}

/// One request/response pair as seen by a [`RecordingTransport`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exchange {
    pub request: String,
    pub status: u16,
    pub body: Vec<u8>,
}

/// Keeps a transcript of every exchange, for comparing backends.
pub struct RecordingTransport<T> {
    inner: T,
    log: Mutex<Vec<Exchange>>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn transcript(&self) -> Vec<Exchange> {
        self.log.lock().unwrap().clone()
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn send(&self, request: &ApiRequest) -> ClientResult<ApiResponse> {
        let resp = self.inner.send(request)?;
        self.log.lock().unwrap().push(Exchange {
            request: format!("{request:?}"),
            status: resp.status,
            body: resp.body.clone(),
        });
        Ok(resp)
    }
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn send(&self, request: &ApiRequest) -> ClientResult<ApiResponse> {
        (**self).send(request)
    }
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn send(&self, request: &ApiRequest) -> ClientResult<ApiResponse> {
        (**self).send(request)
    }
}
