//! Occupancy scenarios and their deterministic population.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use condb_client::payload::checksum_reader;
use condb_client::{derive_payload_path, Client, ClientError};
use condb_core::{ConditionsStore, IovPoint, NewPayloadIov, StoreError};

use crate::error::{LoadgenError, LoadgenResult};

/// Distance between consecutive populated majors.
pub const MAJOR_SPACING: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioName {
    Tiny,
    TinyModerate,
    Moderate,
    HeavyUsage,
    WorstCase,
    Custom,
}

impl ScenarioName {
    pub const NAMED: [ScenarioName; 5] = [
        ScenarioName::Tiny,
        ScenarioName::TinyModerate,
        ScenarioName::Moderate,
        ScenarioName::HeavyUsage,
        ScenarioName::WorstCase,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::Tiny => "tiny",
            ScenarioName::TinyModerate => "tiny-moderate",
            ScenarioName::Moderate => "moderate",
            ScenarioName::HeavyUsage => "heavy-usage",
            ScenarioName::WorstCase => "worst-case",
            ScenarioName::Custom => "custom",
        }
    }

    /// (types, IoVs per type) of the named scenarios.
    pub fn dimensions(self) -> Option<(u32, u32)> {
        match self {
            ScenarioName::Tiny => Some((10, 10)),
            ScenarioName::TinyModerate => Some((10, 200)),
            ScenarioName::Moderate => Some((100, 200)),
            ScenarioName::HeavyUsage => Some((100, 500)),
            ScenarioName::WorstCase => Some((200, 2600)),
            ScenarioName::Custom => None,
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioName::NAMED
            .into_iter()
            .chain([ScenarioName::Custom])
            .find(|n| n.as_str() == s)
            .ok_or_else(|| format!("unknown scenario {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scenario {
    pub name: ScenarioName,
    pub n_types: u32,
    pub iovs_per_type: u32,
    pub seed: u64,
}

impl Scenario {
    pub fn named(name: ScenarioName, seed: u64) -> Option<Self> {
        let (n_types, iovs_per_type) = name.dimensions()?;
        Some(Self {
            name,
            n_types,
            iovs_per_type,
            seed,
        })
    }

    pub fn custom(n_types: u32, iovs_per_type: u32, seed: u64) -> Self {
        Self {
            name: ScenarioName::Custom,
            n_types,
            iovs_per_type,
            seed,
        }
    }

    pub fn total_rows(&self) -> u64 {
        u64::from(self.n_types) * u64::from(self.iovs_per_type)
    }

    pub fn tag_name(&self) -> String {
        match self.name {
            ScenarioName::Custom => format!("custom-{}x{}-{}", self.n_types, self.iovs_per_type, self.seed),
            n => format!("{n}-{}", self.seed),
        }
    }

    pub fn type_name(&self, index: u32) -> String {
        format!("type_{index:04}")
    }

    pub fn type_names(&self) -> Vec<String> {
        (0..self.n_types).map(|i| self.type_name(i)).collect()
    }

    /// Populated starts of every list, ascending.
    pub fn starts(&self) -> Vec<IovPoint> {
        (0..self.iovs_per_type)
            .map(|k| IovPoint::new(k * MAJOR_SPACING, 0))
            .collect()
    }

    pub fn max_major(&self) -> u32 {
        self.iovs_per_type.saturating_sub(1) * MAJOR_SPACING
    }

    /// Starts of list `type_index` in the order they are inserted.
    pub fn insertion_sequence(&self, type_index: u32, order: InsertionOrder) -> Vec<IovPoint> {
        let mut starts = self.starts();
        match order {
            InsertionOrder::Ascending => {}
            InsertionOrder::Descending => starts.reverse(),
            InsertionOrder::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (u64::from(type_index) << 32));
                starts.shuffle(&mut rng);
            }
        }
        starts
    }

    /// Synthetic metadata for one IoV; no payload file is written.
    pub fn synthetic_iov(&self, type_index: u32, start: IovPoint) -> NewPayloadIov {
        let content = format!("{}/{}/{}/{}", self.tag_name(), self.type_name(type_index), start.major, start.minor);
        let (checksum, _) = checksum_reader(content.as_bytes()).expect("reading from memory");
        NewPayloadIov {
            payload_url: derive_payload_path(&checksum),
            checksum,
            size_bytes: content.len() as u64,
            start,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} types x {} IoVs)", self.name, self.n_types, self.iovs_per_type)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InsertionOrder {
    Ascending,
    Descending,
    Random,
}

impl InsertionOrder {
    pub const ALL: [InsertionOrder; 3] = [InsertionOrder::Ascending, InsertionOrder::Descending, InsertionOrder::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            InsertionOrder::Ascending => "ascending",
            InsertionOrder::Descending => "descending",
            InsertionOrder::Random => "random",
        }
    }
}

impl FromStr for InsertionOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        InsertionOrder::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| format!("unknown insertion order {s:?}"))
    }
}

/// Outcome of a population run. On failure `completed_types` says what is
/// already in place; running the population again resumes from there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationReport {
    pub global_tag: String,
    pub completed_types: Vec<String>,
    pub inserted_iovs: u64,
    pub error: Option<String>,
}

impl PopulationReport {
    pub fn is_complete(&self, scenario: &Scenario) -> bool {
        self.error.is_none() && self.completed_types.len() == scenario.n_types as usize
    }
}

fn ignore_exists<T>(r: Result<T, StoreError>) -> Result<(), StoreError> {
    match r {
        Ok(_) | Err(StoreError::AlreadyExists { .. }) => Ok(()),
        Err(e) => Err(e),
    }
}

/// Populates `scenario` directly through a store, one bulk insert per list.
pub fn populate_store(store: &dyn ConditionsStore, scenario: &Scenario, order: InsertionOrder) -> PopulationReport {
    let tag = scenario.tag_name();
    let mut report = PopulationReport {
        global_tag: tag.clone(),
        completed_types: Vec::new(),
        inserted_iovs: 0,
        error: None,
    };
    let run = |report: &mut PopulationReport| -> Result<(), StoreError> {
        ignore_exists(store.create_global_tag(&tag))?;
        for t in 0..scenario.n_types {
            let ty = scenario.type_name(t);
            ignore_exists(store.create_payload_type(&ty))?;
            ignore_exists(store.attach_payload_list(&tag, &ty))?;
            let present = store.list_payload_iovs(&tag, &ty)?.len() as u32;
            if present == 0 {
                let iovs = scenario
                    .insertion_sequence(t, order)
                    .into_iter()
                    .map(|s| scenario.synthetic_iov(t, s))
                    .collect();
                report.inserted_iovs += store.insert_payload_iovs_bulk(&tag, &ty, iovs)? as u64;
            } else if present != scenario.iovs_per_type {
                // Bulk inserts are all-or-nothing, so this is foreign data.
                return Err(StoreError::SchemaConflict(format!(
                    "list {tag}/{ty} holds {present} IoVs, expected {}",
                    scenario.iovs_per_type
                )));
            }
            report.completed_types.push(ty);
        }
        Ok(())
    };
    if let Err(e) = run(&mut report) {
        report.error = Some(e.to_string());
    }
    report
}

/// Populates `scenario` through the REST API, one request per IoV. Starts
/// already present are skipped, which makes the operation resumable.
pub fn populate_http(client: &Client, scenario: &Scenario, order: InsertionOrder) -> PopulationReport {
    let tag = scenario.tag_name();
    let mut report = PopulationReport {
        global_tag: tag.clone(),
        completed_types: Vec::new(),
        inserted_iovs: 0,
        error: None,
    };
    let exists = |r: Result<(), ClientError>, code: &str| match r {
        Err(e) if e.api_code() == Some(code) => Ok(()),
        other => other,
    };
    let run = |report: &mut PopulationReport| -> Result<(), ClientError> {
        exists(client.create_global_tag(&tag).map(drop), "global_tag_exists")?;
        for t in 0..scenario.n_types {
            let ty = scenario.type_name(t);
            exists(client.create_payload_type(&ty).map(drop), "payload_type_exists")?;
            exists(client.attach_payload_list(&tag, &ty).map(drop), "payload_list_exists")?;
            let present: std::collections::HashSet<IovPoint> =
                client.list_payload_iovs(&tag, &ty)?.iter().map(|i| i.start()).collect();
            for start in scenario.insertion_sequence(t, order) {
                if present.contains(&start) {
                    continue;
                }
                let iov = scenario.synthetic_iov(t, start);
                client.insert_payload_iov(&tag, &ty, &iov.payload_url, &iov.checksum, iov.size_bytes, start)?;
                report.inserted_iovs += 1;
            }
            report.completed_types.push(ty);
        }
        Ok(())
    };
    if let Err(e) = run(&mut report) {
        report.error = Some(e.to_string());
    }
    report
}

impl Scenario {
    pub fn validate(&self) -> LoadgenResult<()> {
        if self.n_types == 0 || self.iovs_per_type == 0 {
            return Err(LoadgenError::Config("scenarios need at least one type and one IoV".into()));
        }
        if u64::from(self.iovs_per_type - 1) * u64::from(MAJOR_SPACING) > u64::from(u32::MAX) {
            return Err(LoadgenError::Config("too many IoVs per type for the major range".into()));
        }
        Ok(())
    }
}
