//! Experiments built on campaigns: scaling matrix, burst, insertion order.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use condb_core::api::ApiPolicy;
use condb_core::{ConditionsStore, IovPoint, ResolutionResult, ResolutionStrategy, SqliteStore};
use condb_service::{BackgroundServer, ServiceOptions};

use crate::campaign::{self, generate_queries, run_campaign, CampaignConfig, CampaignRecord, IovRange};
use crate::error::{LoadgenError, LoadgenResult};
use crate::scenario::{populate_store, InsertionOrder, Scenario};
use crate::wire::{self, WireTarget};
use crate::stats::mean_and_rel_spread;
use crate::summary::{summarize, CampaignSummary};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingCell {
    pub scenario: Scenario,
    pub strategy: ResolutionStrategy,
    pub repetition: u32,
    pub summary: Option<CampaignSummary>,
    pub error: Option<String>,
}

/// Campaign settings shared by every cell of a study.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignTemplate {
    pub n_requests: usize,
    pub in_flight_depth: usize,
    pub seed: u64,
    pub request_timeout_ms: u64,
}

impl Default for CampaignTemplate {
    fn default() -> Self {
        Self {
            n_requests: 10_000,
            in_flight_depth: campaign::DEFAULT_IN_FLIGHT_DEPTH,
            seed: 0,
            request_timeout_ms: 120_000,
        }
    }
}

impl CampaignTemplate {
    pub fn config(&self, target: &str, scenario: &Scenario, strategy: Option<ResolutionStrategy>) -> CampaignConfig {
        CampaignConfig {
            n_requests: self.n_requests,
            in_flight_depth: self.in_flight_depth,
            seed: self.seed,
            request_timeout_ms: self.request_timeout_ms,
            strategy,
            ..CampaignConfig::new(target, scenario.tag_name(), IovRange::for_scenario(scenario))
        }
    }
}

fn run_cell(config: &CampaignConfig) -> Result<CampaignSummary, String> {
    let out = run_campaign(config).map_err(|e| e.to_string())?;
    summarize(&out.records).map_err(|e| e.to_string())
}

/// One campaign per (scenario, strategy, repetition) against an already
/// populated service in benchmark mode. A failing cell is recorded and the
/// matrix continues. Cells come back ordered by scenario size.
pub fn run_scaling_study(
    target: &str,
    scenarios: &[Scenario],
    strategies: &[ResolutionStrategy],
    repetitions: u32,
    template: &CampaignTemplate,
) -> Vec<ScalingCell> {
    let mut ordered = scenarios.to_vec();
    ordered.sort_by_key(|s| (s.total_rows(), s.n_types));
    let mut cells = Vec::new();
    for scenario in &ordered {
        for &strategy in strategies {
            for repetition in 0..repetitions {
                let result = run_cell(&template.config(target, scenario, Some(strategy)));
                cells.push(ScalingCell {
                    scenario: *scenario,
                    strategy,
                    repetition,
                    error: result.as_ref().err().cloned(),
                    summary: result.ok(),
                });
            }
        }
    }
    cells
}

/// Aggregate of the repetitions of one (scenario, strategy) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub scenario: Scenario,
    pub strategy: ResolutionStrategy,
    pub repetitions: usize,
    pub mean_response_frequency_hz: f64,
    /// Relative standard deviation across repetitions: the noise band.
    pub rel_spread: f64,
    pub mean_response_time_ms: f64,
    pub errors: usize,
}

pub fn scaling_table(cells: &[ScalingCell]) -> Vec<ScalingRow> {
    let mut rows: Vec<ScalingRow> = Vec::new();
    for cell in cells {
        if rows.iter().any(|r| r.scenario == cell.scenario && r.strategy == cell.strategy) {
            continue;
        }
        let group: Vec<&ScalingCell> = cells
            .iter()
            .filter(|c| c.scenario == cell.scenario && c.strategy == cell.strategy)
            .collect();
        let summaries: Vec<&CampaignSummary> = group.iter().filter_map(|c| c.summary.as_ref()).collect();
        let hz: Vec<f64> = summaries.iter().map(|s| s.mean_response_frequency_hz).collect();
        let rt: Vec<f64> = summaries.iter().map(|s| s.mean_response_time_ms).collect();
        let (mean_hz, spread) = mean_and_rel_spread(&hz);
        rows.push(ScalingRow {
            scenario: cell.scenario,
            strategy: cell.strategy,
            repetitions: group.len(),
            mean_response_frequency_hz: mean_hz,
            rel_spread: spread,
            mean_response_time_ms: mean_and_rel_spread(&rt).0,
            errors: group.iter().filter(|c| c.error.is_some()).count()
                + summaries.iter().map(|s| s.error_count).sum::<usize>(),
        });
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BurstConfig {
    pub target: String,
    pub global_tag: String,
    pub n_requests: usize,
    /// All requests are sent within this window.
    pub window_ms: u64,
    /// Every response must arrive within this time of the first send.
    pub deadline_ms: u64,
    pub iov_range: IovRange,
    pub seed: u64,
}

impl BurstConfig {
    pub fn new(target: impl Into<String>, scenario: &Scenario) -> Self {
        Self {
            target: target.into(),
            global_tag: scenario.tag_name(),
            n_requests: 10_000,
            window_ms: 1_000,
            deadline_ms: 60_000,
            iov_range: IovRange::for_scenario(scenario),
            seed: scenario.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BurstReport {
    pub passed: bool,
    pub n_requests: usize,
    pub ok_within_deadline: usize,
    /// Indices without a 200 response inside the deadline.
    pub failed_indices: Vec<usize>,
    /// Offset of the last send from the first, milliseconds.
    pub send_span_ms: f64,
    /// Offset of the last response from the first send, milliseconds.
    pub completion_ms: f64,
    pub records: Vec<CampaignRecord>,
}

const SPAWN_LEAD: Duration = Duration::from_millis(200);
/// Releases are scheduled over this share of the window; the rest absorbs
/// wake-up lateness so the measured sends still fit inside it.
const RELEASE_FRACTION: f64 = 0.9;

/// Open-loop burst: request `i` is released at `i * 0.9 * window / n`,
/// regardless of outstanding responses. Passing needs every answer to be a
/// 200 inside the deadline and the measured send span inside the window.
pub fn run_burst_test(config: &BurstConfig) -> LoadgenResult<BurstReport> {
    if config.n_requests == 0 {
        return Err(LoadgenError::Config("n_requests must be positive".into()));
    }
    let campaign = CampaignConfig {
        n_requests: config.n_requests,
        in_flight_depth: config.n_requests,
        seed: config.seed,
        request_timeout_ms: config.deadline_ms,
        ..CampaignConfig::new(&config.target, &config.global_tag, config.iov_range)
    };
    campaign.validate()?;
    let queries = generate_queries(config.n_requests, config.iov_range, config.seed);
    let rt = campaign::runtime()?;
    let target = Arc::new(rt.block_on(WireTarget::resolve(&config.target))?);
    let requests: Vec<Vec<u8>> = queries.iter().map(|&q| target.request(&campaign.path_and_query(q))).collect();
    let timeout = Duration::from_millis(config.deadline_ms);
    // Every task exists before the first release, so spawning does not eat into the window.
    let origin = Instant::now() + SPAWN_LEAD;
    let step = Duration::from_millis(config.window_ms).as_secs_f64() * RELEASE_FRACTION / config.n_requests as f64;

    let mut records = rt.block_on(async {
        let handles: Vec<_> = queries
            .iter()
            .zip(requests)
            .enumerate()
            .map(|(i, (&q, request))| {
                let target = target.clone();
                let release = origin + Duration::from_secs_f64(step * i as f64);
                tokio::spawn(async move {
                    tokio::time::sleep_until(release.into()).await;
                    wire::issue(&target, &request, timeout, origin, i, q).await
                })
            })
            .collect();
        let mut out = Vec::with_capacity(handles.len());
        for h in handles {
            out.push(h.await.expect("burst task panicked"));
        }
        out
    });
    records.sort_by_key(|r| r.index);

    let first = records.iter().map(|r| r.sent_at_us).min().unwrap_or(0);
    let deadline_us = config.deadline_ms * 1000;
    let failed_indices: Vec<usize> = records
        .iter()
        .filter(|r| r.http_status != 200 || r.received_at_us - first > deadline_us)
        .map(|r| r.index)
        .collect();
    let last_sent = records.iter().map(|r| r.sent_at_us).max().unwrap_or(0);
    let last_received = records.iter().map(|r| r.received_at_us).max().unwrap_or(0);
    let send_span_ms = (last_sent - first) as f64 / 1000.0;
    Ok(BurstReport {
        passed: failed_indices.is_empty() && send_span_ms <= config.window_ms as f64,
        n_requests: config.n_requests,
        ok_within_deadline: config.n_requests - failed_indices.len(),
        failed_indices,
        send_span_ms,
        completion_ms: (last_received - first) as f64 / 1000.0,
        records,
    })
}

/// A service to measure, kept alive by `_guard`.
pub struct OrderTarget {
    pub base_url: String,
    _guard: Box<dyn std::any::Any + Send>,
}

impl OrderTarget {
    pub fn new(base_url: String, guard: impl std::any::Any + Send) -> Self {
        Self {
            base_url,
            _guard: Box::new(guard),
        }
    }
}

/// A fresh SQLite store under `dir` populated in `order`, served in-process.
/// With `degrade_index` the covering index is replaced by a plain one.
pub fn local_target(dir: &Path, scenario: &Scenario, order: InsertionOrder, degrade_index: bool) -> LoadgenResult<OrderTarget> {
    scenario.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| LoadgenError::io(format!("creating {}", dir.display()), e))?;
    let store = SqliteStore::open(dir.join(format!("{}.sqlite", order.as_str())), 8)?;
    store.migrate()?;
    let report = populate_store(&store, scenario, order);
    if let Some(e) = report.error {
        return Err(LoadgenError::Config(format!("population failed: {e}")));
    }
    store.analyze()?;
    if degrade_index {
        store.degrade_covering_index()?;
    }
    let options = ServiceOptions {
        policy: ApiPolicy::default(),
        ..ServiceOptions::default()
    };
    let server = BackgroundServer::start(Arc::new(store), options)?;
    Ok(OrderTarget::new(server.base_url(), server))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderRun {
    pub order: InsertionOrder,
    pub mean_response_frequency_hz: f64,
    /// Relative deviation from the mean over all orders.
    pub deviation: f64,
    pub within_band: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderReport {
    /// Hard requirement: every order answered every probe identically and
    /// correctly.
    pub answers_identical: bool,
    pub mismatched_probes: Vec<usize>,
    pub tolerance: f64,
    pub runs: Vec<OrderRun>,
}

impl OrderReport {
    pub fn frequencies_within_band(&self) -> bool {
        self.runs.iter().all(|r| r.within_band)
    }

    pub fn passed(&self) -> bool {
        self.answers_identical && self.frequencies_within_band()
    }
}

/// Number of resolution answers compared across orders.
pub const ORDER_PROBES: usize = 500;

/// Builds one target per insertion order through `factory`, compares the
/// answers to a fixed probe set with the expected ones, then measures each
/// target.
pub fn run_order_sensitivity_test(
    scenario: &Scenario,
    orders: &[InsertionOrder],
    factory: &dyn Fn(InsertionOrder) -> LoadgenResult<OrderTarget>,
    template: &CampaignTemplate,
    tolerance: f64,
) -> LoadgenResult<OrderReport> {
    let probes = generate_queries(ORDER_PROBES, IovRange::for_scenario(scenario), scenario.seed ^ 0x5eed);
    let mut answers: Vec<Vec<Vec<Answer>>> = Vec::new();
    let mut freqs = Vec::new();
    for &order in orders {
        let target = factory(order)?;
        answers.push(fetch_answers(&target.base_url, &scenario.tag_name(), &probes)?);
        let config = template.config(&target.base_url, scenario, None);
        let summary = summarize(&run_campaign(&config)?.records)?;
        freqs.push(summary.mean_response_frequency_hz);
    }
    let expected: Vec<Vec<Answer>> = probes.iter().map(|&q| expected_answer(scenario, q)).collect();
    let mismatched_probes: Vec<usize> = (0..probes.len())
        .filter(|&i| answers.iter().any(|a| a[i] != expected[i]))
        .collect();
    let mean = freqs.iter().sum::<f64>() / freqs.len().max(1) as f64;
    let runs = orders
        .iter()
        .zip(&freqs)
        .map(|(&order, &hz)| {
            let deviation = if mean > 0.0 { hz / mean - 1.0 } else { 0.0 };
            OrderRun {
                order,
                mean_response_frequency_hz: hz,
                deviation,
                within_band: deviation.abs() <= tolerance,
            }
        })
        .collect();
    Ok(OrderReport {
        answers_identical: mismatched_probes.is_empty(),
        mismatched_probes,
        tolerance,
        runs,
    })
}

/// The parts of a resolution that depend only on the logical content
/// (insertion timestamps differ between populations).
type Answer = (String, String, String, u64, IovPoint);

fn answer_of(r: &ResolutionResult) -> Answer {
    let iov = &r.payload_iov;
    (
        r.payload_type.clone(),
        iov.payload_url.clone(),
        iov.checksum.to_string(),
        iov.size_bytes,
        iov.start(),
    )
}

/// Evenly spaced starts make the correct answer a division.
fn expected_answer(scenario: &Scenario, q: IovPoint) -> Vec<Answer> {
    let k = (q.major / crate::scenario::MAJOR_SPACING).min(scenario.iovs_per_type - 1);
    let start = IovPoint::new(k * crate::scenario::MAJOR_SPACING, 0);
    (0..scenario.n_types)
        .map(|t| {
            let iov = scenario.synthetic_iov(t, start);
            (
                scenario.type_name(t),
                iov.payload_url,
                iov.checksum.to_string(),
                iov.size_bytes,
                start,
            )
        })
        .collect()
}

fn fetch_answers(base_url: &str, tag: &str, probes: &[IovPoint]) -> LoadgenResult<Vec<Vec<Answer>>> {
    let rt = campaign::runtime()?;
    let http = campaign::http_client(4, Duration::from_secs(60))?;
    rt.block_on(async {
        let mut out = Vec::with_capacity(probes.len());
        for q in probes {
            let url = format!(
                "{}/api/payloadIOVs?gtName={tag}&majorIOV={}&minorIOV={}",
                base_url.trim_end_matches('/'),
                q.major,
                q.minor
            );
            let body = async { http.get(&url).send().await?.bytes().await }
                .await
                .map_err(|e| LoadgenError::Config(format!("probe {url}: {e}")))?;
            let results: Vec<ResolutionResult> = serde_json::from_slice(&body)
                .map_err(|e| LoadgenError::Config(format!("probe {url}: {e}")))?;
            out.push(results.iter().map(answer_of).collect());
        }
        Ok(out)
    })
}
