use std::fs::{File, OpenOptions};
use std::future::Future;
use std::io::{LineWriter, Write};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::body::{Body, Bytes};
use axum::extract::{Path as UrlPath, RawQuery, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::Response;
use axum::routing::{get, post, put};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::net::TcpListener;
use tokio::sync::Semaphore;

use condb_core::api::{self, ApiError, ApiPolicy, ApiRequest, ApiResponse};
use condb_core::ConditionsStore;

use crate::config::ServiceConfig;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error("cannot open request log {path}: {source}")]
    RequestLog {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Bounded FIFO admission: at most `max_in_flight` requests are handled at
/// once, up to `queue_capacity` more wait, anything beyond gets 503.
struct Admission {
    permits: Semaphore,
    waiting: AtomicUsize,
    queue_capacity: usize,
}

#[derive(Serialize)]
struct LogLine<'a> {
    ts: String,
    method: &'a str,
    path: &'a str,
    status: u16,
    latency_us: u128,
}

struct RequestLog(Mutex<LineWriter<File>>);

impl RequestLog {
    fn open(path: &Path) -> Result<Self, ServeError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| ServeError::RequestLog {
                path: path.display().to_string(),
                source,
            })?;
        Ok(Self(Mutex::new(LineWriter::new(file))))
    }

    fn record(&self, line: &LogLine<'_>) {
        let Ok(mut json) = serde_json::to_vec(line) else { return };
        json.push(b'\n');
        let mut w = self.0.lock().unwrap_or_else(|p| p.into_inner());
        // Logging must never fail a request.
        let _ = w.write_all(&json);
    }
}

#[derive(Clone)]
pub(crate) struct AppState {
    store: Arc<dyn ConditionsStore>,
    policy: ApiPolicy,
    admission: Arc<Admission>,
    log: Option<Arc<RequestLog>>,
}

/// Options for building the router without a config file.
#[derive(Debug, Clone)]
pub struct ServiceOptions {
    pub policy: ApiPolicy,
    pub max_in_flight: usize,
    pub queue_capacity: usize,
    pub request_log_path: Option<std::path::PathBuf>,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        let cfg = ServiceConfig::default();
        Self::from(&cfg)
    }
}

impl From<&ServiceConfig> for ServiceOptions {
    fn from(cfg: &ServiceConfig) -> Self {
        Self {
            policy: cfg.policy(),
            max_in_flight: cfg.max_in_flight.max(1),
            queue_capacity: cfg.queue_capacity,
            request_log_path: cfg.request_log_path.clone(),
        }
    }
}

fn to_http(resp: ApiResponse) -> Response {
    let mut out = Response::new(Body::from(resp.body));
    *out.status_mut() = StatusCode::from_u16(resp.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    out.headers_mut()
        .insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
    out
}

fn error_response(err: ApiError) -> Response {
    to_http(ApiResponse::error(&err))
}

async fn dispatch(state: &AppState, request: ApiRequest) -> Response {
    let store = state.store.clone();
    let policy = state.policy;
    match tokio::task::spawn_blocking(move || api::handle(&*store, &policy, request)).await {
        Ok(resp) => to_http(resp),
        Err(e) => error_response(ApiError::new(500, "internal_error", e.to_string())),
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, Response> {
    serde_json::from_slice(body)
        .map_err(|e| error_response(ApiError::new(400, "bad_request", format!("invalid JSON body: {e}"))))
}

async fn list_global_tags(State(s): State<AppState>) -> Response {
    dispatch(&s, ApiRequest::ListGlobalTags).await
}

async fn create_global_tag(State(s): State<AppState>, body: Bytes) -> Response {
    match parse_body(&body) {
        Ok(b) => dispatch(&s, ApiRequest::CreateGlobalTag(b)).await,
        Err(r) => r,
    }
}

async fn set_global_tag_status(State(s): State<AppState>, UrlPath(name): UrlPath<String>, body: Bytes) -> Response {
    match parse_body(&body) {
        Ok(body) => dispatch(&s, ApiRequest::SetGlobalTagStatus { name, body }).await,
        Err(r) => r,
    }
}

async fn describe_global_tag(State(s): State<AppState>, UrlPath(name): UrlPath<String>) -> Response {
    dispatch(&s, ApiRequest::DescribeGlobalTag { name }).await
}

async fn list_tag_iovs(
    State(s): State<AppState>,
    UrlPath((global_tag, payload_type)): UrlPath<(String, String)>,
) -> Response {
    dispatch(&s, ApiRequest::ListPayloadIovs { global_tag, payload_type }).await
}

async fn create_payload_type(State(s): State<AppState>, body: Bytes) -> Response {
    match parse_body(&body) {
        Ok(b) => dispatch(&s, ApiRequest::CreatePayloadType(b)).await,
        Err(r) => r,
    }
}

async fn list_payload_types(State(s): State<AppState>) -> Response {
    dispatch(&s, ApiRequest::ListPayloadTypes).await
}

async fn attach_payload_list(State(s): State<AppState>, body: Bytes) -> Response {
    match parse_body(&body) {
        Ok(b) => dispatch(&s, ApiRequest::AttachPayloadList(b)).await,
        Err(r) => r,
    }
}

async fn insert_payload_iov(State(s): State<AppState>, body: Bytes) -> Response {
    match parse_body(&body) {
        Ok(b) => dispatch(&s, ApiRequest::InsertPayloadIov(b)).await,
        Err(r) => r,
    }
}

async fn resolve_payload_iovs(State(s): State<AppState>, RawQuery(query): RawQuery) -> Response {
    let query = query.unwrap_or_default();
    let pairs: Vec<(String, String)> = url::form_urlencoded::parse(query.as_bytes()).into_owned().collect();
    match ApiRequest::resolve_from_query(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))) {
        Ok(req) => dispatch(&s, req).await,
        Err(e) => error_response(e),
    }
}

async fn payload_urls(State(s): State<AppState>) -> Response {
    dispatch(&s, ApiRequest::PayloadUrls).await
}

async fn healthz(State(s): State<AppState>) -> Response {
    dispatch(&s, ApiRequest::Health).await
}

async fn not_found() -> Response {
    error_response(ApiError::new(404, "route_not_found", "no such route"))
}

async fn method_not_allowed() -> Response {
    error_response(ApiError::new(405, "method_not_allowed", "method not allowed on this route"))
}

async fn admit_and_log(State(s): State<AppState>, req: Request, next: Next) -> Response {
    let started = Instant::now();
    let method = req.method().clone();
    let path = req
        .uri()
        .path_and_query()
        .map(|p| p.as_str().to_owned())
        .unwrap_or_default();

    let response = match s.admission.permits.try_acquire() {
        Ok(_permit) => next.run(req).await,
        Err(_) => {
            let queued = s.admission.waiting.fetch_add(1, Ordering::SeqCst);
            if queued >= s.admission.queue_capacity {
                s.admission.waiting.fetch_sub(1, Ordering::SeqCst);
                let mut r = error_response(ApiError::new(503, "queue_full", "request queue is full"));
                r.headers_mut().insert(header::RETRY_AFTER, HeaderValue::from_static("1"));
                r
            } else {
                let permit = s.admission.permits.acquire().await;
                s.admission.waiting.fetch_sub(1, Ordering::SeqCst);
                let _permit = permit.expect("semaphore is never closed");
                next.run(req).await
            }
        }
    };

    if let Some(log) = &s.log {
        log.record(&LogLine {
            ts: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true),
            method: method.as_str(),
            path: &path,
            status: response.status().as_u16(),
            latency_us: started.elapsed().as_micros(),
        });
    }
    response
}

/// Builds the REST router over `store`.
pub fn router(store: Arc<dyn ConditionsStore>, options: &ServiceOptions) -> Result<Router, ServeError> {
    let log = match &options.request_log_path {
        Some(p) => Some(Arc::new(RequestLog::open(p)?)),
        None => None,
    };
    let state = AppState {
        store,
        policy: options.policy,
        admission: Arc::new(Admission {
            permits: Semaphore::new(options.max_in_flight.max(1)),
            waiting: AtomicUsize::new(0),
            queue_capacity: options.queue_capacity,
        }),
        log,
    };
    Ok(Router::new()
        .route("/api/globalTags", get(list_global_tags).post(create_global_tag))
        .route("/api/globalTags/{name}", get(describe_global_tag))
        .route("/api/globalTags/{name}/status", put(set_global_tag_status))
        .route("/api/globalTags/{name}/payloadIOVs/{payload_type}", get(list_tag_iovs))
        .route("/api/payloadTypes", get(list_payload_types).post(create_payload_type))
        .route("/api/payloadLists", post(attach_payload_list))
        .route("/api/payloadIOVs", get(resolve_payload_iovs).post(insert_payload_iov))
        .route("/api/payloadUrls", get(payload_urls))
        .route("/healthz", get(healthz))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .layer(middleware::from_fn_with_state(state.clone(), admit_and_log))
        .with_state(state))
}

pub async fn bind(addr: &str) -> Result<TcpListener, ServeError> {
    TcpListener::bind(addr).await.map_err(|source| ServeError::Bind {
        addr: addr.to_owned(),
        source,
    })
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    listener: TcpListener,
    router: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    axum::serve(listener, router.into_make_service())
        .with_graceful_shutdown(shutdown)
        .await?;
    Ok(())
}

/// A server running on its own runtime thread; stopped on drop.
pub struct BackgroundServer {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<Result<(), ServeError>>>,
}

impl BackgroundServer {
    /// Binds `127.0.0.1:0` and starts serving `store`.
    pub fn start(store: Arc<dyn ConditionsStore>, options: ServiceOptions) -> Result<Self, ServeError> {
        Self::start_on("127.0.0.1:0", store, options)
    }

    pub fn start_on(addr: &str, store: Arc<dyn ConditionsStore>, options: ServiceOptions) -> Result<Self, ServeError> {
        let app = router(store, &options)?;
        let std_listener = std::net::TcpListener::bind(addr).map_err(|source| ServeError::Bind {
            addr: addr.to_owned(),
            source,
        })?;
        std_listener.set_nonblocking(true)?;
        let local = std_listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::Builder::new()
            .name(format!("condb-server-{}", local.port()))
            .spawn(move || {
                let rt = tokio::runtime::Builder::new_multi_thread()
                    .enable_all()
                    .build()?;
                rt.block_on(async move {
                    let listener = TcpListener::from_std(std_listener)?;
                    serve(listener, app, async {
                        let _ = rx.await;
                    })
                    .await
                })
            })?;
        Ok(Self {
            addr: local,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) -> Result<(), ServeError> {
        self.stop_inner()
    }

    fn stop_inner(&mut self) -> Result<(), ServeError> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or(Ok(())),
            None => Ok(()),
        }
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        let _ = self.stop_inner();
    }
}
