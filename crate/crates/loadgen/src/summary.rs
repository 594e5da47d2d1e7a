//! Reduction of campaign records to the reported metrics.

use serde::{Deserialize, Serialize};

use crate::campaign::CampaignRecord;
use crate::error::{LoadgenError, LoadgenResult};

/// Upper bucket edges of the response time histogram, microseconds.
pub const HISTOGRAM_EDGES_US: [u64; 17] = [
    100, 200, 500, 1_000, 2_000, 5_000, 10_000, 20_000, 50_000, 100_000, 200_000, 500_000, 1_000_000, 2_000_000,
    5_000_000, 10_000_000, 60_000_000,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBucket {
    /// Exclusive upper edge; `None` for the overflow bucket.
    pub upper_us: Option<u64>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondBin {
    pub second: u64,
    /// Successful responses received during this second.
    pub response_frequency_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub n_records: usize,
    pub success_count: usize,
    pub error_count: usize,
    /// First send to last response, seconds.
    pub duration_s: f64,
    pub mean_response_time_ms: f64,
    pub p50_response_time_ms: f64,
    pub p95_response_time_ms: f64,
    pub p99_response_time_ms: f64,
    /// Successful responses per second of campaign duration.
    pub mean_response_frequency_hz: f64,
    /// Requests sent per second of the sending window.
    pub mean_request_frequency_hz: f64,
    pub response_time_histogram: Vec<HistogramBucket>,
    /// Seconds counted from the first send.
    pub per_second_response_frequency: Vec<SecondBin>,
}

fn percentile_ms(sorted_us: &[u64], q: f64) -> f64 {
    if sorted_us.is_empty() {
        return 0.0;
    }
    let rank = ((q * sorted_us.len() as f64).ceil() as usize).clamp(1, sorted_us.len());
    sorted_us[rank - 1] as f64 / 1000.0
}

/// Pure function of the records: equal inputs give equal summaries.
pub fn summarize(records: &[CampaignRecord]) -> LoadgenResult<CampaignSummary> {
    if records.is_empty() {
        return Err(LoadgenError::EmptyRecords);
    }
    let first_sent = records.iter().map(|r| r.sent_at_us).min().expect("non-empty");
    let last_sent = records.iter().map(|r| r.sent_at_us).max().expect("non-empty");
    let last_received = records.iter().map(|r| r.received_at_us).max().expect("non-empty");
    let duration_us = last_received.saturating_sub(first_sent);
    let duration_s = duration_us as f64 / 1e6;

    let successes: Vec<&CampaignRecord> = records.iter().filter(|r| r.is_success()).collect();
    let mut times: Vec<u64> = successes.iter().map(|r| r.response_time_us()).collect();
    times.sort_unstable();
    let mean_response_time_ms = if times.is_empty() {
        0.0
    } else {
        times.iter().map(|&t| t as f64).sum::<f64>() / times.len() as f64 / 1000.0
    };

    let mut histogram: Vec<HistogramBucket> = HISTOGRAM_EDGES_US
        .iter()
        .map(|&e| HistogramBucket {
            upper_us: Some(e),
            count: 0,
        })
        .chain([HistogramBucket {
            upper_us: None,
            count: 0,
        }])
        .collect();
    for &t in &times {
        let slot = HISTOGRAM_EDGES_US.partition_point(|&edge| edge <= t);
        histogram[slot].count += 1;
    }

    let n_seconds = duration_us / 1_000_000 + 1;
    let mut per_second = vec![0u64; n_seconds as usize];
    for r in &successes {
        per_second[((r.received_at_us - first_sent) / 1_000_000) as usize] += 1;
    }

    let rate = |n: usize, span_s: f64| if n == 0 || span_s <= 0.0 { 0.0 } else { n as f64 / span_s };
    let send_span_s = (last_sent - first_sent) as f64 / 1e6;
    Ok(CampaignSummary {
        n_records: records.len(),
        success_count: successes.len(),
        error_count: records.len() - successes.len(),
        duration_s,
        mean_response_time_ms,
        p50_response_time_ms: percentile_ms(&times, 0.50),
        p95_response_time_ms: percentile_ms(&times, 0.95),
        p99_response_time_ms: percentile_ms(&times, 0.99),
        mean_response_frequency_hz: rate(successes.len(), duration_s),
        mean_request_frequency_hz: rate(records.len(), send_span_s),
        response_time_histogram: histogram,
        per_second_response_frequency: per_second
            .into_iter()
            .enumerate()
            .map(|(s, c)| SecondBin {
                second: s as u64,
                response_frequency_hz: c as f64,
            })
            .collect(),
    })
}
