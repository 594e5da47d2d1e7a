use std::path::PathBuf;

use clap::Args;

use condb_core::{open_store, ResolutionStrategy};
use condb_service::{ServiceConfig, ServiceOptions};

use crate::exit::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Service configuration file (TOML).
    #[arg(long, env = "CONDB_CONFIG")]
    config: Option<PathBuf>,
    /// Listen address, e.g. 127.0.0.1:8080 (port 0 picks a free port).
    #[arg(long)]
    bind: Option<String>,
    /// SQLite database file, or :memory:.
    #[arg(long)]
    db: Option<String>,
    /// Append one JSON line per request to this file.
    #[arg(long)]
    request_log: Option<PathBuf>,
    /// Requests handled at once.
    #[arg(long)]
    max_in_flight: Option<usize>,
    /// Requests allowed to wait; beyond this the service answers 503.
    #[arg(long)]
    queue_capacity: Option<usize>,
    /// Reject every write request.
    #[arg(long)]
    read_only: bool,
    /// Accept the strategy query parameter.
    #[arg(long)]
    benchmark_mode: bool,
    /// Default resolution strategy in benchmark mode.
    #[arg(long)]
    strategy: Option<ResolutionStrategy>,
}

/// Flag > environment > file > default.
pub fn resolve_config(args: &ServeArgs, env: impl Fn(&str) -> Option<String>) -> CliResult<ServiceConfig> {
    let mut config = match crate::config_path(args.config.clone()) {
        Some(path) => ServiceConfig::load(&path)?,
        None => ServiceConfig::default(),
    };
    config.apply_env(env);
    if let Some(v) = &args.bind {
        config.bind_address = v.clone();
    }
    if let Some(v) = &args.db {
        config.store.database_path = v.clone();
    }
    if let Some(v) = &args.request_log {
        config.request_log_path = Some(v.clone());
    }
    if let Some(v) = args.max_in_flight {
        config.max_in_flight = v;
    }
    if let Some(v) = args.queue_capacity {
        config.queue_capacity = v;
    }
    if let Some(v) = args.strategy {
        config.store.resolution_strategy = v;
    }
    config.read_only |= args.read_only;
    config.benchmark_mode |= args.benchmark_mode;
    config.validate()?;
    Ok(config)
}

pub fn run(args: ServeArgs) -> CliResult {
    let config = resolve_config(&args, |k| std::env::var(k).ok())?;
    let store = open_store(&config.store)?;
    let options = ServiceOptions::from(&config);
    let router = condb_service::router(store, &options)?;

    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::new(crate::exit::Exit::Failure, e.to_string()))?;
    rt.block_on(async {
        let listener = condb_service::bind(&config.bind_address).await?;
        let addr = listener.local_addr().map_err(condb_service::ServeError::Io)?;
        // Scripts wait for this line before sending requests.
        println!("listening on {addr}");
        eprintln!(
            "condb: serving {} on http://{addr} (read_only={}, benchmark_mode={})",
            config.store.database_path, config.read_only, config.benchmark_mode
        );
        condb_service::serve(listener, router, shutdown_signal()).await?;
        eprintln!("condb: shut down");
        Ok(())
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        () = ctrl_c => {}
        () = term => {}
    }
}
