//! Load generation and benchmark studies for the conditions service.
//!
//! Scenarios are populated deterministically, campaigns issue uniformly
//! random resolution requests with a bounded number in flight, and every
//! request is captured as a pair of monotonic timestamps that [`summarize`]
//! turns into latency and frequency metrics.

pub mod campaign;
mod error;
pub mod output;
pub mod scenario;
pub mod stats;
pub mod study;
pub mod summary;
mod wire;

pub use campaign::{
    generate_queries, max_outstanding, run_campaign, CampaignConfig, CampaignOutput, CampaignRecord, IovRange,
};
pub use error::{LoadgenError, LoadgenResult};
pub use scenario::{populate_http, populate_store, InsertionOrder, PopulationReport, Scenario, ScenarioName};
pub use study::{
    local_target, run_burst_test, run_order_sensitivity_test, run_scaling_study, scaling_table, BurstConfig,
    BurstReport, CampaignTemplate, OrderReport, OrderTarget, ScalingCell, ScalingRow,
};
pub use summary::{summarize, CampaignSummary};
