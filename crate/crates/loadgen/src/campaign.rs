//! Pipelined resolution requests with timestamp-pair capture.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use condb_core::{IovPoint, ResolutionStrategy};

use crate::error::{LoadgenError, LoadgenResult};

/// Inclusive upper bounds of the uniform query distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IovRange {
    pub major_max: u32,
    pub minor_max: u32,
}

impl IovRange {
    /// Majors up to the largest populated start, any minor.
    pub fn for_scenario(scenario: &crate::Scenario) -> Self {
        Self {
            major_max: scenario.max_major(),
            minor_max: u32::MAX,
        }
    }
}

/// Seeded uniform query points over `range`.
pub fn generate_queries(n: usize, range: IovRange, seed: u64) -> Vec<IovPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| IovPoint::new(rng.random_range(0..=range.major_max), rng.random_range(0..=range.minor_max)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignConfig {
    /// Service base URL.
    pub target: String,
    pub global_tag: String,
    pub n_requests: usize,
    pub in_flight_depth: usize,
    pub iov_range: IovRange,
    /// Sent as the `strategy` parameter (benchmark mode only).
    pub strategy: Option<ResolutionStrategy>,
    pub seed: u64,
    pub request_timeout_ms: u64,
}

pub const DEFAULT_IN_FLIGHT_DEPTH: usize = 64;

impl CampaignConfig {
    pub fn new(target: impl Into<String>, global_tag: impl Into<String>, iov_range: IovRange) -> Self {
        Self {
            target: target.into(),
            global_tag: global_tag.into(),
            n_requests: 10_000,
            in_flight_depth: DEFAULT_IN_FLIGHT_DEPTH,
            iov_range,
            strategy: None,
            seed: 0,
            request_timeout_ms: 120_000,
        }
    }

    pub fn validate(&self) -> LoadgenResult<()> {
        if self.n_requests == 0 {
            return Err(LoadgenError::Config("n_requests must be positive".into()));
        }
        if self.in_flight_depth == 0 {
            return Err(LoadgenError::Config("in_flight_depth must be positive".into()));
        }
        reqwest::Url::parse(&self.target).map_err(|e| LoadgenError::Config(format!("target {:?}: {e}", self.target)))?;
        Ok(())
    }

    pub(crate) fn url(&self, q: IovPoint) -> String {
        format!("{}{}", self.target.trim_end_matches('/'), self.path_and_query(q))
    }

    pub(crate) fn path_and_query(&self, q: IovPoint) -> String {
        let mut path = format!(
            "/api/payloadIOVs?gtName={}&majorIOV={}&minorIOV={}",
            self.global_tag, q.major, q.minor
        );
        if let Some(s) = self.strategy {
            path.push_str("&strategy=");
            path.push_str(s.as_str());
        }
        path
    }
}

/// One request. Times are microseconds on a monotonic clock since the
/// campaign started.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignRecord {
    pub index: usize,
    pub major_iov: u32,
    pub minor_iov: u32,
    pub sent_at_us: u64,
    pub received_at_us: u64,
    /// 0 when no response arrived.
    pub http_status: u16,
    pub bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CampaignRecord {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.http_status)
    }

    pub fn response_time_us(&self) -> u64 {
        self.received_at_us - self.sent_at_us
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignOutput {
    pub config: CampaignConfig,
    /// Wall-clock time of the monotonic origin, microseconds since the epoch.
    pub started_at_unix_us: u64,
    pub records: Vec<CampaignRecord>,
}

fn unix_now_us() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_micros() as u64)
        .unwrap_or(0)
}

pub(crate) fn runtime() -> LoadgenResult<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| LoadgenError::io("starting the request runtime", e))
}

pub(crate) fn http_client(max_idle: usize, timeout: Duration) -> LoadgenResult<reqwest::Client> {
    reqwest::Client::builder()
        .pool_max_idle_per_host(max_idle)
        .timeout(timeout)
        .build()
        .map_err(|e| LoadgenError::Config(e.to_string()))
}

pub(crate) async fn issue(
    http: &reqwest::Client,
    url: &str,
    origin: Instant,
    index: usize,
    q: IovPoint,
) -> CampaignRecord {
    let sent = origin.elapsed();
    let outcome = async {
        let resp = http.get(url).send().await?;
        let status = resp.status().as_u16();
        let body = resp.bytes().await?;
        Ok::<_, reqwest::Error>((status, body.len() as u64))
    }
    .await;
    let received = origin.elapsed();
    let (http_status, bytes, error) = match outcome {
        Ok((s, b)) => (s, b, None),
        Err(e) => (0, 0, Some(e.to_string())),
    };
    CampaignRecord {
        index,
        major_iov: q.major,
        minor_iov: q.minor,
        sent_at_us: sent.as_micros() as u64,
        received_at_us: received.as_micros() as u64,
        http_status,
        bytes,
        error,
    }
}

/// Issues `n_requests` resolutions with at most `in_flight_depth` outstanding.
/// Failed requests are recorded, never fatal.
pub fn run_campaign(config: &CampaignConfig) -> LoadgenResult<CampaignOutput> {
    config.validate()?;
    let queries = Arc::new(generate_queries(config.n_requests, config.iov_range, config.seed));
    let http = http_client(config.in_flight_depth, Duration::from_millis(config.request_timeout_ms))?;
    let rt = runtime()?;
    let started_at_unix_us = unix_now_us();
    let origin = Instant::now();
    let next = Arc::new(AtomicUsize::new(0));

    let records = rt.block_on(async {
        let workers: Vec<_> = (0..config.in_flight_depth.min(config.n_requests))
            .map(|_| {
                let (http, queries, next, config) = (http.clone(), queries.clone(), next.clone(), config.clone());
                tokio::spawn(async move {
                    let mut mine = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= queries.len() {
                            break;
                        }
                        mine.push(issue(&http, &config.url(queries[i]), origin, i, queries[i]).await);
                    }
                    mine
                })
            })
            .collect();
        let mut all = Vec::with_capacity(config.n_requests);
        for w in workers {
            all.extend(w.await.expect("campaign worker panicked"));
        }
        all
    });
    let mut records = records;
    records.sort_by_key(|r| r.index);
    Ok(CampaignOutput {
        config: config.clone(),
        started_at_unix_us,
        records,
    })
}

/// Largest number of simultaneously outstanding requests implied by the
/// timestamp pairs. A response and a send in the same microsecond do not
/// overlap.
pub fn max_outstanding(records: &[CampaignRecord]) -> usize {
    let mut events: Vec<(u64, i8)> = records
        .iter()
        .flat_map(|r| [(r.sent_at_us, 1), (r.received_at_us, -1)])
        .collect();
    events.sort();
    let (mut cur, mut max) = (0i64, 0i64);
    for (_, delta) in events {
        cur += i64::from(delta);
        max = max.max(cur);
    }
    max as usize
}
