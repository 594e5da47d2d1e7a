use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{ClientError, ClientResult};
use crate::payload::{derive_payload_path, is_payload_file_name};
use crate::Client;
use condb_core::Checksum;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OrphanFile {
    pub path: PathBuf,
    pub size_bytes: u64,
}

/// Disagreements between payload directories and the metadata.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub scanned_files: usize,
    /// Stored payloads no metadata row points at.
    pub orphans: Vec<OrphanFile>,
    /// Metadata URLs with no file under any scanned prefix.
    pub dangling: Vec<String>,
    /// Leftovers of interrupted copies.
    pub temporaries: Vec<PathBuf>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.orphans.is_empty() && self.dangling.is_empty() && self.temporaries.is_empty()
    }
}

impl Client {
    /// Cross-checks payload files under `prefixes` against the metadata.
    /// With `global_tag`, only that tag's URLs are checked for dangling rows;
    /// orphans are always judged against every tag.
    pub fn audit_orphans(&self, prefixes: &[PathBuf], global_tag: Option<&str>) -> ClientResult<AuditReport> {
        let all_urls: BTreeSet<String> = self.payload_urls()?.into_iter().collect();
        let checked_urls: BTreeSet<String> = match global_tag {
            None => all_urls.clone(),
            Some(tag) => {
                let mut urls = BTreeSet::new();
                for list in self.describe_global_tag(tag)?.payload_lists {
                    urls.extend(
                        self.list_payload_iovs(tag, &list.payload_type)?
                            .into_iter()
                            .map(|iov| iov.payload_url),
                    );
                }
                urls
            }
        };

        let mut report = AuditReport::default();
        let mut present = BTreeSet::new();
        for prefix in prefixes {
            let mut files = Vec::new();
            walk(prefix, &mut files).map_err(|e| ClientError::io(format!("scanning {}", prefix.display()), e))?;
            for file in files {
                let name = file.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                if name.starts_with('.') && name.contains(".tmp-") {
                    report.temporaries.push(file);
                    continue;
                }
                if !is_payload_file_name(name) {
                    continue;
                }
                let rel = derive_payload_path(&Checksum::parse(name).expect("checked above"));
                if file.strip_prefix(prefix).map(|r| r != Path::new(&rel)).unwrap_or(true) {
                    continue;
                }
                report.scanned_files += 1;
                if !all_urls.contains(&rel) {
                    let size_bytes = fs::metadata(&file).map(|m| m.len()).unwrap_or(0);
                    report.orphans.push(OrphanFile { path: file, size_bytes });
                }
                present.insert(rel);
            }
        }
        report.dangling = checked_urls.difference(&present).cloned().collect();
        report.orphans.sort_by(|a, b| a.path.cmp(&b.path));
        report.temporaries.sort();
        Ok(report)
    }
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(e),
    };
    for entry in entries {
        let entry = entry?;
        let ty = entry.file_type()?;
        if ty.is_dir() {
            walk(&entry.path(), out)?;
        } else if ty.is_file() {
            out.push(entry.path());
        }
    }
    Ok(())
}
