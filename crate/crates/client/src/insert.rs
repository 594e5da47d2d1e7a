//! Payload insertion protocol.
//!
//! 1. checksum the local file
//! 2. derive the content-addressed relative path
//! 3. pre-check: tag unlocked, list attached, start not taken, a prefix writable
//! 4. copy the file to the first write prefix that accepts it
//! 5. send the insertion request
//!
//! Nothing is written before step 4, so a failure up to step 3 leaves no trace.
//! A failure between 4 and 5 leaves a stored file with no metadata; that file
//! is what `audit_orphans` reports, and retrying the insertion reuses it.

use std::path::{Path, PathBuf};

use condb_core::api::ApiError;
use condb_core::{Checksum, IovPoint, PayloadIov};

use crate::error::{ClientError, ClientResult};
use crate::payload::{self, Stored};
use crate::Client;

/// Boundaries between protocol steps, where a fault can be injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InsertStep {
    AfterChecksum,
    AfterPathDerivation,
    AfterPreCheck,
    AfterCopy,
}

impl InsertStep {
    pub const ALL: [InsertStep; 4] = [
        InsertStep::AfterChecksum,
        InsertStep::AfterPathDerivation,
        InsertStep::AfterPreCheck,
        InsertStep::AfterCopy,
    ];
}

/// Test hook called at every step boundary. Returning `Err` aborts the
/// insertion there, as if the process had been killed.
pub trait FaultInjector: Send + Sync {
    fn check(&self, step: InsertStep) -> Result<(), String>;
}

/// Fails at exactly one boundary.
#[derive(Debug, Clone, Copy)]
pub struct FailAt(pub InsertStep);

impl FaultInjector for FailAt {
    fn check(&self, step: InsertStep) -> Result<(), String> {
        if step == self.0 {
            Err("injected fault".into())
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InsertOutcome {
    pub iov: PayloadIov,
    /// Where the payload file lives now.
    pub stored_at: PathBuf,
    /// False when identical content was already stored.
    pub copied: bool,
}

impl Client {
    /// Stores `local_file` and registers it in `payload_type` of `global_tag`
    /// starting at (`major`, `minor`).
    pub fn insert_payload(
        &self,
        global_tag: &str,
        payload_type: &str,
        major: u64,
        minor: u64,
        local_file: &Path,
    ) -> ClientResult<InsertOutcome> {
        let start = IovPoint::try_new(major, minor).map_err(|e| ClientError::PreCheck(e.into()))?;

        let (checksum, size) = payload::compute_checksum(local_file)?;
        self.fault(InsertStep::AfterChecksum)?;

        let rel = payload::derive_payload_path(&checksum);
        self.fault(InsertStep::AfterPathDerivation)?;

        self.pre_check(global_tag, payload_type, start)?;
        let writable = self.writable_prefixes(&rel);
        if writable.is_empty() {
            return Err(ClientError::NoWritablePrefix {
                tried: self.config().write_dir_prefixes.clone(),
            });
        }
        self.fault(InsertStep::AfterPreCheck)?;

        let stored = self.copy_with_failover(local_file, &writable, &rel, &checksum)?;
        self.fault(InsertStep::AfterCopy)?;

        let copied = matches!(stored, Stored::Copied(_));
        let stored_at = stored.path().to_path_buf();
        let iov = self
            .insert_payload_iov(global_tag, payload_type, &rel, &checksum, size, start)
            .map_err(|source| ClientError::InsertionFailed {
                stored_at: stored_at.clone(),
                source: Box::new(source),
            })?;
        Ok(InsertOutcome { iov, stored_at, copied })
    }

    fn fault(&self, step: InsertStep) -> ClientResult<()> {
        match &self.faults {
            Some(f) => f.check(step).map_err(|reason| ClientError::Interrupted { step, reason }),
            None => Ok(()),
        }
    }

    fn pre_check(&self, global_tag: &str, payload_type: &str, start: IovPoint) -> ClientResult<()> {
        let refuse = |status: u16, code: &str, detail: String| ClientError::PreCheck(ApiError::new(status, code, detail));
        let lift = |e: ClientError| match e {
            ClientError::Api(api) => ClientError::PreCheck(api),
            other => other,
        };

        let tag = self.describe_global_tag(global_tag).map_err(lift)?;
        if tag.status.is_locked() {
            return Err(refuse(423, "global_tag_locked", format!("global tag {global_tag:?} is locked")));
        }
        if !tag.payload_lists.iter().any(|l| l.payload_type == payload_type) {
            return Err(refuse(
                404,
                "payload_list_not_found",
                format!("global tag {global_tag:?} has no payload list of type {payload_type:?}"),
            ));
        }
        let current = self.resolve_uncached(global_tag, start).map_err(lift)?;
        if let Some(hit) = current.iter().find(|r| r.payload_type == payload_type) {
            if hit.payload_iov.start() == start {
                return Err(refuse(
                    409,
                    "duplicate_iov_start",
                    format!("payload list {global_tag}/{payload_type} already has an IoV starting at {start}"),
                ));
            }
        }
        Ok(())
    }

    fn writable_prefixes(&self, rel: &str) -> Vec<PathBuf> {
        self.config()
            .write_dir_prefixes
            .iter()
            .filter(|p| payload::probe_writable(p, rel).is_ok())
            .cloned()
            .collect()
    }

    fn copy_with_failover(
        &self,
        source: &Path,
        prefixes: &[PathBuf],
        rel: &str,
        checksum: &Checksum,
    ) -> ClientResult<Stored> {
        let mut last = None;
        for prefix in prefixes {
            match payload::store_payload(source, prefix, rel, checksum) {
                Ok(stored) => return Ok(stored),
                Err(e) => last = Some((prefix, e)),
            }
        }
        match last {
            Some((prefix, e)) => Err(ClientError::io(format!("copying payload to {}", prefix.display()), e)),
            None => Err(ClientError::NoWritablePrefix { tried: prefixes.to_vec() }),
        }
    }
}
