//! Interval-of-validity coordinates.
//!
//! An IoV start is a `(major, minor)` pair, e.g. run number and luminosity
//! block. For indexed range queries the pair is packed into a single
//! [`CombinedIov`] whose integer ordering equals the lexicographic ordering
//! of the pair.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::DomainError;

/// Base of the combined encoding: `combined = major * IOV_BASE + minor`.
pub const IOV_BASE: u64 = 1 << 32;

/// Exclusive upper bound of both `major` and `minor`.
pub const IOV_COMPONENT_LIMIT: u64 = IOV_BASE;

/// A validated `(major, minor)` start point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IovPoint {
    pub major: u32,
    pub minor: u32,
}

impl IovPoint {
    pub const fn new(major: u32, minor: u32) -> Self {
        Self { major, minor }
    }

    /// Builds a point from wide integers, rejecting components >= 2^32.
    pub fn try_new(major: u64, minor: u64) -> Result<Self, DomainError> {
        let major = u32::try_from(major).map_err(|_| DomainError::IovOutOfRange {
            field: "major_iov",
            value: major,
        })?;
        let minor = u32::try_from(minor).map_err(|_| DomainError::IovOutOfRange {
            field: "minor_iov",
            value: minor,
        })?;
        Ok(Self { major, minor })
    }

    pub fn combined(self) -> CombinedIov {
        CombinedIov((self.major as u64) << 32 | self.minor as u64)
    }
}

impl fmt::Display for IovPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.major, self.minor)
    }
}

/// Single orderable integer encoding of an [`IovPoint`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CombinedIov(pub u64);

impl CombinedIov {
    pub const MIN: CombinedIov = CombinedIov(0);
    pub const MAX: CombinedIov = CombinedIov(u64::MAX);

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn split(self) -> IovPoint {
        let (major, minor) = split_iov(self);
        IovPoint { major, minor }
    }

    /// Order-preserving mapping onto `i64`, used where the storage engine only
    /// has signed 64-bit integers.
    pub fn to_ordered_i64(self) -> i64 {
        (self.0 ^ (1 << 63)) as i64
    }

    pub fn from_ordered_i64(stored: i64) -> Self {
        CombinedIov((stored as u64) ^ (1 << 63))
    }
}

impl fmt::Display for CombinedIov {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Packs `(major, minor)` into one integer. Both components must be < 2^32.
pub fn combine_iov(major: u64, minor: u64) -> Result<CombinedIov, DomainError> {
    Ok(IovPoint::try_new(major, minor)?.combined())
}

/// Inverse of [`combine_iov`].
pub fn split_iov(combined: CombinedIov) -> (u32, u32) {
    ((combined.0 / IOV_BASE) as u32, (combined.0 % IOV_BASE) as u32)
}
