use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use serde::Serialize;

use condb_client::{Client, ClientConfig};
use condb_core::{ResolutionStrategy, StoreConfig};
use condb_loadgen::{
    output, populate_http, populate_store, run_burst_test, run_campaign, run_order_sensitivity_test,
    run_scaling_study, scaling_table, summarize, BurstConfig, CampaignConfig, CampaignTemplate, InsertionOrder,
    IovRange, Scenario, ScenarioName, ScalingRow,
};

use crate::exit::{CliError, CliResult};
use crate::print_json;

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(subcommand)]
    command: BenchCommand,
}

#[derive(Debug, Clone, Args)]
struct ScenarioArgs {
    /// tiny, tiny-moderate, moderate, heavy-usage, worst-case or custom.
    #[arg(long, default_value = "tiny")]
    scenario: ScenarioName,
    /// Payload types of a custom scenario.
    #[arg(long)]
    n_types: Option<u32>,
    /// IoVs per type of a custom scenario.
    #[arg(long)]
    iovs_per_type: Option<u32>,
    /// Seed for population and queries; echoed into every output.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ScenarioArgs {
    fn scenario(&self) -> CliResult<Scenario> {
        let s = match self.scenario {
            ScenarioName::Custom => match (self.n_types, self.iovs_per_type) {
                (Some(t), Some(i)) => Scenario::custom(t, i, self.seed),
                _ => return Err(CliError::config("custom scenarios need --n-types and --iovs-per-type")),
            },
            name => Scenario::named(name, self.seed).expect("named scenario"),
        };
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, Args)]
struct LoadArgs {
    /// Requests per campaign.
    #[arg(long, default_value_t = 10_000)]
    requests: usize,
    /// Maximum requests in flight.
    #[arg(long, default_value_t = condb_loadgen::campaign::DEFAULT_IN_FLIGHT_DEPTH)]
    depth: usize,
    /// Per-request timeout in milliseconds.
    #[arg(long, default_value_t = 120_000)]
    timeout_ms: u64,
}

#[derive(Debug, Subcommand)]
enum BenchCommand {
    /// Create a scenario's tag, types, lists and synthetic IoVs. Resumable.
    Populate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// ascending, descending or random.
        #[arg(long, default_value = "random")]
        order: InsertionOrder,
        /// Service base URL (one request per IoV).
        #[arg(long, env = "CONDB_BASE_URL", conflicts_with = "db")]
        url: Option<String>,
        /// Write directly into this database file (bulk, much faster).
        #[arg(long)]
        db: Option<PathBuf>,
    },
    /// Run one campaign of random resolutions.
    Campaign {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        load: LoadArgs,
        /// Service base URL.
        #[arg(long, env = "CONDB_BASE_URL")]
        url: String,
        /// Resolve this tag instead of the scenario's.
        #[arg(long)]
        tag: Option<String>,
        /// Largest query major (default: last populated start).
        #[arg(long)]
        major_max: Option<u32>,
        /// Largest query minor (default: 4294967295).
        #[arg(long)]
        minor_max: Option<u32>,
        /// Needs a service in benchmark mode.
        #[arg(long)]
        strategy: Option<ResolutionStrategy>,
        /// Directory for records.jsonl, summary.json and CSV files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Campaigns over scenarios x strategies x repetitions.
    Scaling {
        /// Service base URL.
        #[arg(long, env = "CONDB_BASE_URL")]
        url: String,
        /// "all" or a comma separated list of scenario names.
        #[arg(long, default_value = "all")]
        scenarios: String,
        /// "both" or a comma separated list (naive, optimized).
        #[arg(long, default_value = "both")]
        strategies: String,
        /// Campaigns per (scenario, strategy) cell.
        #[arg(long, default_value_t = 1)]
        repetitions: u32,
        /// Seed for the scenarios and queries.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        load: LoadArgs,
        /// Populate missing scenarios through the service first.
        #[arg(long)]
        populate: bool,
        /// Directory for cells.json and scaling.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Send N requests within a window and require every answer within a deadline.
    Burst {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Service base URL.
        #[arg(long, env = "CONDB_BASE_URL")]
        url: String,
        #[arg(long, default_value_t = 10_000)]
        requests: usize,
        /// Every request is released within this many milliseconds.
        #[arg(long, default_value_t = 1_000)]
        window_ms: u64,
        /// Every answer must arrive this many milliseconds after the first send.
        #[arg(long, default_value_t = 60_000)]
        deadline_ms: u64,
        /// Directory for records.jsonl and burst.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare answers and throughput across insertion orders on fresh local stores.
    OrderTest {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        load: LoadArgs,
        /// Allowed relative deviation of each order's frequency from the mean.
        #[arg(long, default_value_t = 0.2)]
        tolerance: f64,
        /// Directory for the per-order databases (default: a temporary one).
        #[arg(long)]
        workdir: Option<PathBuf>,
        /// Degrade the covering index for this order (test fixture).
        #[arg(long)]
        degrade: Option<InsertionOrder>,
        /// Directory for order_test.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(args: BenchArgs) -> CliResult {
    match args.command {
        BenchCommand::Populate {
            scenario,
            order,
            url,
            db,
        } => populate(&scenario.scenario()?, order, url, db),
        BenchCommand::Campaign {
            scenario,
            load,
            url,
            tag,
            major_max,
            minor_max,
            strategy,
            out,
        } => {
            let s = scenario.scenario()?;
            let range = IovRange::for_scenario(&s);
            let config = CampaignConfig {
                n_requests: load.requests,
                in_flight_depth: load.depth,
                request_timeout_ms: load.timeout_ms,
                seed: s.seed,
                strategy,
                ..CampaignConfig::new(
                    url,
                    tag.unwrap_or_else(|| s.tag_name()),
                    IovRange {
                        major_max: major_max.unwrap_or(range.major_max),
                        minor_max: minor_max.unwrap_or(range.minor_max),
                    },
                )
            };
            campaign(&config, out.as_deref())
        }
        BenchCommand::Scaling {
            url,
            scenarios,
            strategies,
            repetitions,
            seed,
            load,
            populate,
            out,
        } => scaling(&url, &scenarios, &strategies, repetitions, seed, &load, populate, out.as_deref()),
        BenchCommand::Burst {
            scenario,
            url,
            requests,
            window_ms,
            deadline_ms,
            out,
        } => {
            let s = scenario.scenario()?;
            let config = BurstConfig {
                n_requests: requests,
                window_ms,
                deadline_ms,
                ..BurstConfig::new(url, &s)
            };
            burst(&config, out.as_deref())
        }
        BenchCommand::OrderTest {
            scenario,
            load,
            tolerance,
            workdir,
            degrade,
            out,
        } => order_test(&scenario.scenario()?, &load, tolerance, workdir, degrade, out.as_deref()),
    }
}

fn populate(scenario: &Scenario, order: InsertionOrder, url: Option<String>, db: Option<PathBuf>) -> CliResult {
    let report = match db {
        Some(path) => {
            let store = condb_core::open_store(&StoreConfig {
                database_path: path.to_string_lossy().into_owned(),
                ..StoreConfig::default()
            })?;
            populate_store(store.as_ref(), scenario, order)
        }
        None => {
            let mut config = ClientConfig::default();
            if let Some(url) = url {
                config.base_url = url;
            }
            populate_http(&Client::new(config)?, scenario, order)
        }
    };
    print_json(&report);
    match report.error {
        Some(e) => Err(CliError::new(
            crate::exit::Exit::Failure,
            format!("population stopped after {} types: {e}", report.completed_types.len()),
        )),
        None => Ok(()),
    }
}

fn campaign(config: &CampaignConfig, out: Option<&Path>) -> CliResult {
    let result = run_campaign(config)?;
    let summary = summarize(&result.records)?;
    if let Some(dir) = out {
        output::write_records_jsonl(&dir.join("records.jsonl"), &result.records)?;
        output::write_json(
            &dir.join("summary.json"),
            &serde_json::json!({ "config": config, "started_at_unix_us": result.started_at_unix_us, "summary": summary }),
        )?;
        output::write_histogram_csv(&dir.join("histogram.csv"), &summary)?;
        output::write_per_second_csv(&dir.join("per_second.csv"), &summary)?;
    }
    eprintln!(
        "condb: {} requests, {} errors, mean {:.3} ms, {:.1} Hz (seed {})",
        summary.n_records, summary.error_count, summary.mean_response_time_ms, summary.mean_response_frequency_hz,
        config.seed
    );
    print_json(&serde_json::json!({ "config": config, "summary": summary }));
    Ok(())
}

fn parse_list<T: std::str::FromStr<Err = String>>(raw: &str, all_word: &str, all: &[T]) -> CliResult<Vec<T>>
where
    T: Copy,
{
    if raw == all_word {
        return Ok(all.to_vec());
    }
    raw.split(',').map(|s| s.trim().parse::<T>().map_err(CliError::config)).collect()
}

/// Optimized must be at least as fast as naive on the large scenarios.
pub fn ordering_violations(rows: &[ScalingRow]) -> Vec<String> {
    let mut out = Vec::new();
    for name in [ScenarioName::HeavyUsage, ScenarioName::WorstCase] {
        let hz = |strategy| {
            rows.iter()
                .find(|r| r.scenario.name == name && r.strategy == strategy)
                .map(|r| r.mean_response_frequency_hz)
        };
        if let (Some(opt), Some(naive)) = (hz(ResolutionStrategy::OptimizedSingleQuery), hz(ResolutionStrategy::NaivePerType)) {
            if opt < naive {
                out.push(format!("{name}: optimized {opt:.1} Hz < naive {naive:.1} Hz"));
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn scaling(
    url: &str,
    scenarios: &str,
    strategies: &str,
    repetitions: u32,
    seed: u64,
    load: &LoadArgs,
    populate: bool,
    out: Option<&Path>,
) -> CliResult {
    let names = parse_list(scenarios, "all", &ScenarioName::NAMED)?;
    let scenarios: Vec<Scenario> = names
        .iter()
        .map(|&n| Scenario::named(n, seed).ok_or_else(|| CliError::config("custom scenarios are not part of the matrix")))
        .collect::<CliResult<_>>()?;
    let strategies = parse_list(strategies, "both", &ResolutionStrategy::ALL)?;
    if populate {
        let client = Client::new(ClientConfig {
            base_url: url.to_owned(),
            ..ClientConfig::default()
        })?;
        for s in &scenarios {
            let report = populate_http(&client, s, InsertionOrder::Random);
            if let Some(e) = report.error {
                return Err(CliError::new(crate::exit::Exit::Failure, format!("populating {s}: {e}")));
            }
        }
    }
    let template = CampaignTemplate {
        n_requests: load.requests,
        in_flight_depth: load.depth,
        seed,
        request_timeout_ms: load.timeout_ms,
    };
    let cells = run_scaling_study(url, &scenarios, &strategies, repetitions, &template);
    let rows = scaling_table(&cells);
    if let Some(dir) = out {
        output::write_json(&dir.join("cells.json"), &cells)?;
        output::write_scaling_csv(&dir.join("scaling.csv"), &rows)?;
    }
    print_json(&rows);
    let failed: Vec<String> = cells
        .iter()
        .filter_map(|c| c.error.as_ref().map(|e| format!("{} / {}: {e}", c.scenario, c.strategy)))
        .collect();
    for f in &failed {
        eprintln!("condb: cell failed: {f}");
    }
    let violations = ordering_violations(&rows);
    if !violations.is_empty() {
        return Err(CliError::check(violations.join("; ")));
    }
    if !failed.is_empty() {
        return Err(CliError::new(crate::exit::Exit::Failure, format!("{} cells failed", failed.len())));
    }
    Ok(())
}

#[derive(Serialize)]
struct BurstSummary<'a> {
    passed: bool,
    n_requests: usize,
    ok_within_deadline: usize,
    failed_indices: &'a [usize],
    send_span_ms: f64,
    completion_ms: f64,
    config: &'a BurstConfig,
}

fn burst(config: &BurstConfig, out: Option<&Path>) -> CliResult {
    let report = run_burst_test(config)?;
    let summary = BurstSummary {
        passed: report.passed,
        n_requests: report.n_requests,
        ok_within_deadline: report.ok_within_deadline,
        failed_indices: &report.failed_indices,
        send_span_ms: report.send_span_ms,
        completion_ms: report.completion_ms,
        config,
    };
    if let Some(dir) = out {
        output::write_records_jsonl(&dir.join("records.jsonl"), &report.records)?;
        output::write_json(&dir.join("burst.json"), &summary)?;
    }
    print_json(&summary);
    if report.passed {
        Ok(())
    } else {
        Err(CliError::check(format!(
            "{} of {} requests without a 200 inside {} ms",
            report.failed_indices.len(),
            report.n_requests,
            config.deadline_ms
        )))
    }
}

fn order_test(
    scenario: &Scenario,
    load: &LoadArgs,
    tolerance: f64,
    workdir: Option<PathBuf>,
    degrade: Option<InsertionOrder>,
    out: Option<&Path>,
) -> CliResult {
    let scratch = workdir.is_none();
    let base = workdir.unwrap_or_else(|| std::env::temp_dir().join(format!("condb-order-test-{}", std::process::id())));
    let factory = |order: InsertionOrder| {
        let dir = base.join(order.as_str());
        let _ = std::fs::remove_dir_all(&dir);
        condb_loadgen::local_target(&dir, scenario, order, degrade == Some(order))
    };
    let template = CampaignTemplate {
        n_requests: load.requests,
        in_flight_depth: load.depth,
        seed: scenario.seed,
        request_timeout_ms: load.timeout_ms,
    };
    let report = run_order_sensitivity_test(scenario, &InsertionOrder::ALL, &factory, &template, tolerance);
    if scratch {
        let _ = std::fs::remove_dir_all(&base);
    }
    let report = report?;
    if let Some(dir) = out {
        output::write_json(&dir.join("order_test.json"), &report)?;
    }
    print_json(&report);
    if !report.answers_identical {
        return Err(CliError::check(format!(
            "{} probes answered differently across insertion orders",
            report.mismatched_probes.len()
        )));
    }
    for r in report.runs.iter().filter(|r| !r.within_band) {
        eprintln!(
            "condb: warning: {} order at {:.1} Hz deviates {:+.0}% from the mean",
            r.order.as_str(),
            r.mean_response_frequency_hz,
            r.deviation * 100.0
        );
    }
    Ok(())
}
