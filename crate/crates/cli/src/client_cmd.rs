use std::path::PathBuf;

use clap::{Args, Subcommand};
use serde::Serialize;

use condb_client::{Client, ClientConfig};

use crate::exit::{CliError, CliResult};
use crate::print_json;

#[derive(Debug, Args)]
pub struct ClientArgs {
    /// Client configuration file (TOML).
    #[arg(long, env = "CONDB_CLIENT_CONFIG", global = true)]
    client_config: Option<PathBuf>,
    /// Service base URL [env: CONDB_BASE_URL].
    #[arg(long, global = true)]
    url: Option<String>,
    /// Prefix for reading payloads [env: CONDB_READ_DIR].
    #[arg(long, global = true)]
    read_dir: Option<PathBuf>,
    /// Destination for new payloads; repeat for failover order [env: CONDB_WRITE_DIRS].
    #[arg(long = "write-dir", global = true)]
    write_dirs: Vec<PathBuf>,
    /// Resolution cache lifetime in seconds.
    #[arg(long, global = true)]
    cache_ttl: Option<f64>,
    /// Use TYPE=PATH instead of the database answer for TYPE.
    #[arg(long = "override", value_name = "TYPE=PATH", global = true)]
    overrides: Vec<String>,
    /// Use an in-process fake database (starts empty).
    #[arg(long, global = true)]
    fake: bool,
    #[command(subcommand)]
    command: ClientCommand,
}

#[derive(Debug, Subcommand)]
enum ClientCommand {
    /// Print the local path of the payload valid at (MAJOR, MINOR).
    GetUrl {
        tag: String,
        payload_type: String,
        major: u64,
        minor: u64,
    },
    /// Locate a payload, optionally verifying its checksum.
    Fetch {
        tag: String,
        payload_type: String,
        major: u64,
        minor: u64,
        #[arg(long)]
        verify: bool,
    },
    /// Store FILE and register it starting at (MAJOR, MINOR).
    InsertPayload {
        tag: String,
        payload_type: String,
        major: u64,
        minor: u64,
        file: PathBuf,
    },
    /// List payload files without metadata and metadata without files.
    AuditOrphans {
        /// Directory to scan; repeatable. Defaults to the write directories.
        #[arg(long)]
        prefix: Vec<PathBuf>,
        /// Only check this tag's metadata for missing files.
        #[arg(long)]
        tag: Option<String>,
    },
}

/// Flag > environment > file > default.
fn resolve_config(args: &ClientArgs, env: impl Fn(&str) -> Option<String>) -> CliResult<ClientConfig> {
    let mut config = match crate::config_path(args.client_config.clone()) {
        Some(path) => ClientConfig::load(&path)?,
        None => ClientConfig::default(),
    };
    config.apply_env(env);
    if let Some(v) = &args.url {
        config.base_url = v.clone();
    }
    if let Some(v) = &args.read_dir {
        config.read_dir_prefix = v.clone();
    }
    if !args.write_dirs.is_empty() {
        config.write_dir_prefixes = args.write_dirs.clone();
    }
    if let Some(v) = args.cache_ttl {
        config.cache_ttl_secs = v;
    }
    for o in &args.overrides {
        let (ty, path) = o
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("--override expects TYPE=PATH, got {o:?}")))?;
        config.override_map.insert(ty.to_owned(), PathBuf::from(path));
    }
    config.use_fake_backend |= args.fake;
    config.validate()?;
    Ok(config)
}

#[derive(Serialize)]
struct Fetched {
    path: PathBuf,
    checksum: Option<String>,
    size: Option<u64>,
    verified: bool,
    from_override: bool,
}

pub fn run(args: ClientArgs) -> CliResult {
    let config = resolve_config(&args, |k| std::env::var(k).ok())?;
    let client = Client::new(config)?;
    match args.command {
        ClientCommand::GetUrl {
            tag,
            payload_type,
            major,
            minor,
        } => println!("{}", client.get_payload_url(&tag, &payload_type, major, minor)?.display()),
        ClientCommand::Fetch {
            tag,
            payload_type,
            major,
            minor,
            verify,
        } => {
            let h = client.fetch_payload(&tag, &payload_type, major, minor, verify)?;
            print_json(&Fetched {
                path: h.path,
                checksum: h.checksum.map(|c| c.to_string()),
                size: h.size,
                verified: h.verified,
                from_override: h.from_override,
            });
        }
        ClientCommand::InsertPayload {
            tag,
            payload_type,
            major,
            minor,
            file,
        } => {
            if client.config().write_dir_prefixes.is_empty() {
                return Err(CliError::config("inserting needs at least one --write-dir"));
            }
            let out = client.insert_payload(&tag, &payload_type, major, minor, &file)?;
            print_json(&serde_json::json!({
                "payload_iov": out.iov,
                "stored_at": out.stored_at,
                "copied": out.copied,
            }));
        }
        ClientCommand::AuditOrphans { prefix, tag } => {
            let prefixes = if prefix.is_empty() {
                client.config().write_dir_prefixes.clone()
            } else {
                prefix
            };
            if prefixes.is_empty() {
                return Err(CliError::config("audit-orphans needs --prefix or configured write directories"));
            }
            let report = client.audit_orphans(&prefixes, tag.as_deref())?;
            print_json(&report);
            if !report.dangling.is_empty() {
                return Err(CliError::check(format!(
                    "{} metadata rows point at missing files",
                    report.dangling.len()
                )));
            }
        }
    }
    Ok(())
}
