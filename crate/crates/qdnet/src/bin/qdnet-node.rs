//! QKD node process serving the ETSI GS QKD 014 API.

use std::path::PathBuf;
use std::time::Duration;

use anyhow::Context;
use clap::Parser;
use qdnet_node::{NodeService, NodeSettings};

#[derive(Parser)]
#[command(about = "QKD node of an emulated network")]
struct Args {
    /// Node name as declared in the configuration.
    #[arg(long)]
    name: String,
    #[arg(long)]
    config: PathBuf,
    /// Broker address, host:port.
    #[arg(long)]
    bus: String,
    /// Address the API listens on.
    #[arg(long, default_value = "127.0.0.1")]
    listen: String,
    /// Overrides the node's api_port.
    #[arg(long)]
    port: Option<u16>,
    /// Key lifetime in the store, seconds.
    #[arg(long)]
    ttl: Option<f64>,
    /// Seconds to wait for the engine before answering 503.
    #[arg(long)]
    engine_timeout: Option<f64>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    qdnet::init_tracing();
    let args = Args::parse();
    let config = qdnet::load_config(&args.config)?;
    let decl = config
        .node(&args.name)
        .with_context(|| format!("node `{}` is not in {}", args.name, args.config.display()))?;
    let port = args.port.unwrap_or(decl.api_port);
    let mut settings = NodeSettings::new(&args.name);
    if let Some(ttl) = args.ttl {
        settings.ttl = Duration::from_secs_f64(ttl);
    }
    if let Some(timeout) = args.engine_timeout {
        settings.engine_timeout = Duration::from_secs_f64(timeout);
    }
    let listener = tokio::net::TcpListener::bind((args.listen.as_str(), port))
        .await
        .with_context(|| format!("cannot listen on {}:{port}", args.listen))?;
    let mut node = NodeService::spawn(config, settings, &args.bus, listener).await?;
    tokio::select! {
        _ = node.wait() => {}
        _ = qdnet::shutdown_signal() => node.shutdown().await,
    }
    Ok(())
}
