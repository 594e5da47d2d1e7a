//! Content-addressed payload files.

use std::fs::{self, File};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use condb_core::Checksum;
use sha2::{Digest, Sha256};

use crate::error::{ClientError, ClientResult};

const BUF_SIZE: usize = 1 << 16;

/// Streams `path` through SHA-256. Returns the digest and the byte count.
pub fn compute_checksum(path: &Path) -> ClientResult<(Checksum, u64)> {
    let file = File::open(path).map_err(|e| ClientError::io(format!("opening {}", path.display()), e))?;
    checksum_reader(file).map_err(|e| ClientError::io(format!("reading {}", path.display()), e))
}

pub fn checksum_reader(mut reader: impl Read) -> io::Result<(Checksum, u64)> {
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; BUF_SIZE];
    let mut total = 0u64;
    loop {
        let n = match reader.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        };
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    Ok((Checksum::from_digest(&hasher.finalize()), total))
}

/// Relative storage path of a payload: `c[0..2]/c[2..4]/c`.
///
/// Only the checksum matters, so identical content always lands on the same
/// path whatever the original file was called.
pub fn derive_payload_path(checksum: &Checksum) -> String {
    let c = checksum.as_str();
    format!("{}/{}/{}", &c[0..2], &c[2..4], c)
}

static TEMP_SEQ: AtomicU64 = AtomicU64::new(0);

fn temp_name(dir: &Path, stem: &str) -> PathBuf {
    let seq = TEMP_SEQ.fetch_add(1, Ordering::Relaxed);
    dir.join(format!(".{stem}.tmp-{}-{seq}", std::process::id()))
}

/// Whether a payload file can be created under `prefix` for `rel`.
pub fn probe_writable(prefix: &Path, rel: &str) -> io::Result<()> {
    let dest = prefix.join(rel);
    let dir = dest.parent().expect("payload paths have a directory");
    fs::create_dir_all(dir)?;
    let probe = temp_name(dir, "probe");
    File::create(&probe)?;
    fs::remove_file(&probe)
}

/// Outcome of [`store_payload`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stored {
    Copied(PathBuf),
    /// Identical content was already present.
    AlreadyPresent(PathBuf),
}

impl Stored {
    pub fn path(&self) -> &Path {
        match self {
            Stored::Copied(p) | Stored::AlreadyPresent(p) => p,
        }
    }
}

/// Copies `source` to `prefix/rel` through a temporary file and a rename, so
/// readers never see a partial payload.
pub fn store_payload(source: &Path, prefix: &Path, rel: &str, checksum: &Checksum) -> io::Result<Stored> {
    let dest = prefix.join(rel);
    if dest.is_file() {
        if let Ok((existing, _)) = File::open(&dest).and_then(checksum_reader) {
            if &existing == checksum {
                return Ok(Stored::AlreadyPresent(dest));
            }
        }
    }
    let dir = dest.parent().expect("payload paths have a directory");
    fs::create_dir_all(dir)?;
    let tmp = temp_name(dir, checksum.as_str());
    let result = (|| {
        let mut input = File::open(source)?;
        let mut out = File::create(&tmp)?;
        io::copy(&mut input, &mut out)?;
        out.flush()?;
        out.sync_all()?;
        fs::rename(&tmp, &dest)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map(|()| Stored::Copied(dest))
}

/// Whether `name` is a payload file name (not a temporary or foreign file).
pub fn is_payload_file_name(name: &str) -> bool {
    Checksum::parse(name).is_ok()
}
