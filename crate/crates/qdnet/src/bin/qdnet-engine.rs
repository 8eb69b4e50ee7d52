//! Quantum modeling engine process.

use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use qdnet_bus::BusClient;
use qdnet_core::quantum::ProtocolRegistry;
use qdnet_engine::{Engine, EngineSettings, EventLog};

#[derive(Parser)]
#[command(about = "Serves modeling requests of an emulated QKD network")]
struct Args {
    /// Network description (YAML).
    #[arg(long)]
    config: PathBuf,
    /// Broker address, host:port.
    #[arg(long)]
    bus: String,
    /// JSON-lines event log; stderr when omitted.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Overrides the configuration's time_scale.
    #[arg(long)]
    time_scale: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    qdnet::init_tracing();
    let args = Args::parse();
    let config = qdnet::load_config(&args.config)?;
    let log = match &args.log {
        Some(path) => EventLog::open(path),
        None => EventLog::stderr(),
    };
    let settings = EngineSettings {
        time_scale: args.time_scale.unwrap_or(config.time_scale),
        seed: args.seed,
    };
    let engine = Engine::new(config, &ProtocolRegistry::builtin(), settings, log)?;
    let bus = BusClient::connect(&args.bus)
        .await
        .with_context(|| format!("cannot reach the broker at {}", args.bus))?;
    tokio::select! {
        outcome = engine.run(bus) => outcome?,
        _ = qdnet::shutdown_signal() => {}
    }
    Ok(())
}
