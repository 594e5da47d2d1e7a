//! Schema entities, validation rules, and the brute-force resolution oracle.
//!
//! The serde representations of these types are the wire format (see
//! `docs/wire-schema.md`); field order is significant because responses are
//! compared byte for byte.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::DomainError;
use crate::iov::{CombinedIov, IovPoint};

pub const MAX_NAME_LEN: usize = 255;

/// Hex length of a SHA-256 digest.
pub const CHECKSUM_HEX_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlobalTagStatus {
    Locked,
    Unlocked,
}

impl GlobalTagStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            GlobalTagStatus::Locked => "locked",
            GlobalTagStatus::Unlocked => "unlocked",
        }
    }

    pub fn is_locked(self) -> bool {
        self == GlobalTagStatus::Locked
    }
}

impl FromStr for GlobalTagStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "locked" => Ok(GlobalTagStatus::Locked),
            "unlocked" => Ok(GlobalTagStatus::Unlocked),
            other => Err(format!("unknown global tag status {other:?}")),
        }
    }
}

impl fmt::Display for GlobalTagStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// UTC instant with microsecond precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(DateTime<Utc>);

impl Timestamp {
    pub fn now() -> Self {
        Self::from_datetime(Utc::now())
    }

    pub fn from_datetime(dt: DateTime<Utc>) -> Self {
        Timestamp(dt.trunc_subsecs(6))
    }

    pub fn from_micros(micros: i64) -> Self {
        Timestamp(DateTime::from_timestamp_micros(micros).unwrap_or_default())
    }

    pub fn as_micros(self) -> i64 {
        self.0.timestamp_micros()
    }

    pub fn datetime(self) -> DateTime<Utc> {
        self.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format("%Y-%m-%dT%H:%M:%S%.6fZ"))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&raw)
            .map(|dt| Timestamp::from_datetime(dt.with_timezone(&Utc)))
            .map_err(serde::de::Error::custom)
    }
}

/// Source of server-assigned timestamps.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Timestamp::now()
    }
}

/// Always returns the same instant. Lets two independent backends produce
/// identical documents for identical logical content.
#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub Timestamp);

impl Clock for FixedClock {
    fn now(&self) -> Timestamp {
        self.0
    }
}

/// Checks a global tag or payload type name: ASCII letters, digits, `_`, `-`
/// and `.`, at most 255 characters.
pub fn validate_name(kind: &'static str, name: &str) -> Result<(), DomainError> {
    let fail = |reason| DomainError::InvalidName {
        kind,
        name: name.to_owned(),
        reason,
    };
    if name.is_empty() {
        return Err(fail("must not be empty"));
    }
    if name.len() > MAX_NAME_LEN {
        return Err(fail("longer than 255 characters"));
    }
    if name == "." || name == ".." {
        return Err(fail("reserved path component"));
    }
    if !name
        .bytes()
        .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.'))
    {
        return Err(fail("only ASCII letters, digits, '_', '-' and '.' are allowed"));
    }
    Ok(())
}

/// Lowercase hex SHA-256 digest.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Checksum(String);

impl Checksum {
    pub fn parse(value: &str) -> Result<Self, DomainError> {
        let ok = value.len() == CHECKSUM_HEX_LEN
            && value
                .bytes()
                .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
        if ok {
            Ok(Checksum(value.to_owned()))
        } else {
            Err(DomainError::InvalidChecksum {
                value: value.to_owned(),
                expected_len: CHECKSUM_HEX_LEN,
            })
        }
    }

    pub fn from_digest(bytes: &[u8]) -> Self {
        Checksum(hex::encode(bytes))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Checksum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Checksum {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Checksum::parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// Payload URLs are relative so that a read-directory prefix can be applied.
pub fn validate_payload_url(url: &str) -> Result<(), DomainError> {
    let fail = |reason| DomainError::InvalidPayloadUrl {
        value: url.to_owned(),
        reason,
    };
    if url.is_empty() {
        return Err(fail("must not be empty"));
    }
    if url.starts_with('/') || url.starts_with('\\') {
        return Err(fail("must be relative"));
    }
    if url.split('/').any(|c| c == "..") {
        return Err(fail("must not contain '..' components"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalTag {
    pub name: String,
    pub status: GlobalTagStatus,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadType {
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadList {
    pub id: i64,
    pub global_tag: String,
    pub payload_type: String,
}

/// Metadata for one external payload plus its open-ended validity start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadIov {
    pub payload_url: String,
    pub checksum: Checksum,
    #[serde(rename = "size")]
    pub size_bytes: u64,
    pub major_iov: u32,
    pub minor_iov: u32,
    pub inserted_at: Timestamp,
}

impl PayloadIov {
    pub fn start(&self) -> IovPoint {
        IovPoint::new(self.major_iov, self.minor_iov)
    }

    pub fn combined(&self) -> CombinedIov {
        self.start().combined()
    }
}

/// A payload IoV as submitted by a client, before the server stamps it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewPayloadIov {
    pub payload_url: String,
    pub checksum: Checksum,
    pub size_bytes: u64,
    pub start: IovPoint,
}

impl NewPayloadIov {
    pub fn validate(&self) -> Result<(), DomainError> {
        validate_payload_url(&self.payload_url)
    }

    pub fn stamp(self, inserted_at: Timestamp) -> PayloadIov {
        PayloadIov {
            payload_url: self.payload_url,
            checksum: self.checksum,
            size_bytes: self.size_bytes,
            major_iov: self.start.major,
            minor_iov: self.start.minor,
            inserted_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionResult {
    pub payload_type: String,
    pub payload_iov: PayloadIov,
}

/// Per-list entry of a global tag description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadListSummary {
    pub id: i64,
    pub payload_type: String,
    pub iov_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalTagDescription {
    pub name: String,
    pub status: GlobalTagStatus,
    pub created_at: Timestamp,
    pub payload_lists: Vec<PayloadListSummary>,
}

/// Fully materialized global tag, as used by [`oracle_resolve`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagContents {
    /// `(payload type name, IoVs in arbitrary order)`.
    pub lists: Vec<(String, Vec<PayloadIov>)>,
}

/// Checks that `new_iov` can join `existing` without duplicating a start.
/// Arrival order is irrelevant; only exact start collisions are rejected.
pub fn validate_insertion(existing: &[PayloadIov], new_iov: &NewPayloadIov) -> Result<(), DomainError> {
    let new = new_iov.start;
    match existing.iter().find(|iov| iov.start() == new) {
        Some(iov) => Err(DomainError::OverlappingStart {
            existing: iov.start(),
            new,
        }),
        None => Ok(()),
    }
}

/// Reference resolution by full scan: for each list, the IoV with the greatest
/// start not after `query`. Lists with no such IoV are omitted. Results are
/// ordered by payload type name.
pub fn oracle_resolve(tag: &TagContents, query: CombinedIov) -> Vec<ResolutionResult> {
    let mut out = Vec::new();
    for (type_name, iovs) in &tag.lists {
        let mut best: Option<&PayloadIov> = None;
        for iov in iovs {
            if iov.combined() > query {
                continue;
            }
            if best.map_or(true, |b| iov.combined() > b.combined()) {
                best = Some(iov);
            }
        }
        if let Some(iov) = best {
            out.push(ResolutionResult {
                payload_type: type_name.clone(),
                payload_iov: iov.clone(),
            });
        }
    }
    out.sort_by(|a, b| a.payload_type.cmp(&b.payload_type));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iov(major: u32, minor: u32) -> PayloadIov {
        PayloadIov {
            payload_url: format!("p/{major}_{minor}"),
            checksum: Checksum::parse(&"0".repeat(64)).unwrap(),
            size_bytes: 1,
            major_iov: major,
            minor_iov: minor,
            inserted_at: Timestamp::from_micros(0),
        }
    }

    fn new_iov(major: u32, minor: u32) -> NewPayloadIov {
        let i = iov(major, minor);
        NewPayloadIov {
            payload_url: i.payload_url,
            checksum: i.checksum,
            size_bytes: 1,
            start: IovPoint::new(major, minor),
        }
    }

    #[test]
    fn name_rules() {
        assert!(validate_name("global tag", "sPHENIX_2024_v1").is_ok());
        assert!(validate_name("global tag", "a.b-c_9").is_ok());
        assert!(validate_name("global tag", "").is_err());
        assert!(validate_name("global tag", "a/b").is_err());
        assert!(validate_name("global tag", "a b").is_err());
        assert!(validate_name("global tag", "..").is_err());
        assert!(validate_name("global tag", &"x".repeat(255)).is_ok());
        assert!(validate_name("global tag", &"x".repeat(256)).is_err());
    }

    #[test]
    fn checksum_rules() {
        assert!(Checksum::parse(&"ab".repeat(32)).is_ok());
        assert!(Checksum::parse(&"AB".repeat(32)).is_err());
        assert!(Checksum::parse(&"ab".repeat(31)).is_err());
        assert!(Checksum::parse(&"zz".repeat(32)).is_err());
    }

    #[test]
    fn payload_url_must_be_relative() {
        assert!(validate_payload_url("ab/cd/abcd").is_ok());
        assert!(validate_payload_url("/abs/path").is_err());
        assert!(validate_payload_url("a/../b").is_err());
        assert!(validate_payload_url("").is_err());
    }

    #[test]
    fn timestamp_wire_format() {
        let t = Timestamp::from_micros(1_700_000_000_123_456);
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(json, "\"2023-11-14T22:13:20.123456Z\"");
        let back: Timestamp = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn oracle_empty_tag() {
        let tag = TagContents::default();
        assert!(oracle_resolve(&tag, CombinedIov::MAX).is_empty());
    }

    #[test]
    fn oracle_picks_latest_start_not_after_query() {
        let tag = TagContents {
            lists: vec![("t".into(), vec![iov(1, 0), iov(5, 0), iov(10, 0)])],
        };
        let got = oracle_resolve(&tag, IovPoint::new(7, 3).combined());
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].payload_iov.start(), IovPoint::new(5, 0));
        assert!(oracle_resolve(&tag, IovPoint::new(0, 99).combined()).is_empty());
        let exact = oracle_resolve(&tag, IovPoint::new(10, 0).combined());
        assert_eq!(exact[0].payload_iov.start(), IovPoint::new(10, 0));
    }

    #[test]
    fn oracle_tiny_population_one_result_per_type() {
        let lists = (0..10)
            .map(|t| {
                let iovs = (0..10).map(|k| iov(k * 10, 0)).collect();
                (format!("type_{t:02}"), iovs)
            })
            .collect();
        let tag = TagContents { lists };
        let got = oracle_resolve(&tag, IovPoint::new(90, 0).combined());
        assert_eq!(got.len(), 10);
        assert!(got.iter().all(|r| r.payload_iov.start() == IovPoint::new(90, 0)));
    }

    #[test]
    fn insertion_validation() {
        assert!(validate_insertion(&[], &new_iov(3, 3)).is_ok());
        assert_eq!(
            validate_insertion(&[iov(5, 0)], &new_iov(5, 0)),
            Err(DomainError::OverlappingStart {
                existing: IovPoint::new(5, 0),
                new: IovPoint::new(5, 0)
            })
        );
        // Out-of-order insertion between existing starts changes the answer at (7,0).
        let mut list = vec![iov(1, 0), iov(10, 0)];
        let q = IovPoint::new(7, 0).combined();
        let before = oracle_resolve(&TagContents { lists: vec![("t".into(), list.clone())] }, q);
        assert_eq!(before[0].payload_iov.start(), IovPoint::new(1, 0));
        assert!(validate_insertion(&list, &new_iov(5, 0)).is_ok());
        list.push(iov(5, 0));
        let after = oracle_resolve(&TagContents { lists: vec![("t".into(), list)] }, q);
        assert_eq!(after[0].payload_iov.start(), IovPoint::new(5, 0));
    }

    fn arb_tag() -> impl Strategy<Value = TagContents> {
        prop::collection::vec(prop::collection::btree_set((0u32..50, 0u32..4), 0..20), 0..6).prop_map(
            |lists| TagContents {
                lists: lists
                    .into_iter()
                    .enumerate()
                    .map(|(i, starts)| {
                        (format!("type_{i}"), starts.into_iter().map(|(a, b)| iov(a, b)).collect())
                    })
                    .collect(),
            },
        )
    }

    proptest! {
        // Independent formulation: sort descending, take the first start <= query.
        #[test]
        fn oracle_matches_sorted_scan(tag in arb_tag(), qa in 0u32..55, qb in 0u32..5) {
            let q = IovPoint::new(qa, qb).combined();
            let got = oracle_resolve(&tag, q);
            let mut expected = Vec::new();
            for (name, iovs) in &tag.lists {
                let mut sorted = iovs.clone();
                sorted.sort_by_key(|i| std::cmp::Reverse(i.start()));
                if let Some(hit) = sorted.into_iter().find(|i| i.start() <= IovPoint::new(qa, qb)) {
                    expected.push((name.clone(), hit.start()));
                }
            }
            expected.sort();
            let got: Vec<_> = got.into_iter().map(|r| (r.payload_type, r.payload_iov.start())).collect();
            prop_assert_eq!(got, expected);
        }

        #[test]
        fn oracle_is_insertion_order_insensitive(tag in arb_tag(), seed in any::<u64>(), qa in 0u32..55) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut shuffled = tag.clone();
            for (_, iovs) in shuffled.lists.iter_mut() {
                iovs.shuffle(&mut rng);
            }
            let q = IovPoint::new(qa, 0).combined();
            prop_assert_eq!(oracle_resolve(&tag, q), oracle_resolve(&shuffled, q));
        }
    }
}
