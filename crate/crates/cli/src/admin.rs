use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Subcommand};

use condb_client::{Client, ClientConfig, FakeTransport, Transport};
use condb_core::api::ApiPolicy;
use condb_core::{Checksum, GlobalTagStatus, IovPoint, StoreConfig};

use crate::exit::{CliError, CliResult};
use crate::print_json;

/// Where requests go: a running service, or a database file opened in-process.
#[derive(Debug, Clone, Args)]
pub struct Target {
    /// Service base URL.
    #[arg(long, env = "CONDB_BASE_URL", global = true)]
    pub url: Option<String>,
    /// Operate on this database file directly instead of a service.
    #[arg(long, global = true, conflicts_with = "url")]
    pub db: Option<PathBuf>,
}

impl Target {
    pub fn client(&self) -> CliResult<Client> {
        match &self.db {
            Some(path) => {
                let store = condb_core::open_store(&StoreConfig {
                    database_path: path.to_string_lossy().into_owned(),
                    ..StoreConfig::default()
                })?;
                let transport: Arc<dyn Transport> = Arc::new(FakeTransport::with_store(store, ApiPolicy::default()));
                Ok(Client::with_transport(ClientConfig::default(), transport))
            }
            None => {
                let mut config = ClientConfig::default();
                if let Some(url) = &self.url {
                    config.base_url = url.clone();
                }
                Ok(Client::new(config)?)
            }
        }
    }
}

#[derive(Debug, Args)]
pub struct AdminArgs {
    #[command(flatten)]
    target: Target,
    #[command(subcommand)]
    command: AdminCommand,
}

#[derive(Debug, Subcommand)]
enum AdminCommand {
    /// Create an unlocked global tag.
    CreateTag { name: String },
    /// Lock a global tag against writes.
    Lock { name: String },
    /// Unlock a global tag.
    Unlock { name: String },
    /// Create a payload type.
    CreateType { name: String },
    /// Attach a payload list of TYPE to TAG.
    AttachList { tag: String, payload_type: String },
    /// Register payload metadata without copying any file.
    InsertIov {
        tag: String,
        payload_type: String,
        /// Path of the payload relative to the read directory.
        #[arg(long)]
        payload_url: String,
        /// SHA-256 of the payload, 64 lowercase hex characters.
        #[arg(long)]
        checksum: String,
        /// Payload size in bytes.
        #[arg(long)]
        size: u64,
        #[arg(long)]
        major: u64,
        #[arg(long)]
        minor: u64,
    },
    /// List tags, types, or the IoVs of one list.
    List {
        #[command(subcommand)]
        what: ListWhat,
    },
    /// Show a global tag with its payload lists.
    Describe { name: String },
    /// Resolve TAG at (MAJOR, MINOR).
    Resolve { tag: String, major: u64, minor: u64 },
    /// Service and store health.
    Health,
}

#[derive(Debug, Subcommand)]
enum ListWhat {
    Tags,
    Types,
    /// IoVs of one payload list in start order.
    Iovs { tag: String, payload_type: String },
}

pub fn run(args: AdminArgs) -> CliResult {
    let client = args.target.client()?;
    match args.command {
        AdminCommand::CreateTag { name } => print_json(&client.create_global_tag(&name)?),
        AdminCommand::Lock { name } => print_json(&client.set_global_tag_status(&name, GlobalTagStatus::Locked)?),
        AdminCommand::Unlock { name } => print_json(&client.set_global_tag_status(&name, GlobalTagStatus::Unlocked)?),
        AdminCommand::CreateType { name } => print_json(&client.create_payload_type(&name)?),
        AdminCommand::AttachList { tag, payload_type } => print_json(&client.attach_payload_list(&tag, &payload_type)?),
        AdminCommand::InsertIov {
            tag,
            payload_type,
            payload_url,
            checksum,
            size,
            major,
            minor,
        } => {
            let checksum = Checksum::parse(&checksum).map_err(|e| CliError::config(e.to_string()))?;
            let start = IovPoint::try_new(major, minor).map_err(|e| CliError::config(e.to_string()))?;
            print_json(&client.insert_payload_iov(&tag, &payload_type, &payload_url, &checksum, size, start)?)
        }
        AdminCommand::List { what } => match what {
            ListWhat::Tags => print_json(&client.list_global_tags()?),
            ListWhat::Types => print_json(&client.list_payload_types()?),
            ListWhat::Iovs { tag, payload_type } => print_json(&client.list_payload_iovs(&tag, &payload_type)?),
        },
        AdminCommand::Describe { name } => print_json(&client.describe_global_tag(&name)?),
        AdminCommand::Resolve { tag, major, minor } => print_json(&*client.resolve(&tag, major, minor)?),
        AdminCommand::Health => print_json(&client.health()?),
    }
    Ok(())
}
