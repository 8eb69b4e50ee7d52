//! Message broker process.

use std::path::PathBuf;
use std::time::Duration;

use anyhow::Context;
use clap::Parser;
use qdnet_bus::{Broker, BrokerOptions, DEFAULT_RETENTION};

#[derive(Parser)]
#[command(about = "Routing-key message broker for an emulated QKD network")]
struct Args {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:5672")]
    bind: String,
    /// Seconds a message is retained while its routing key has no subscriber.
    #[arg(long)]
    retention: Option<f64>,
    /// Append every received frame to this JSON-lines file.
    #[arg(long)]
    capture: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    qdnet::init_tracing();
    let args = Args::parse();
    let options = BrokerOptions {
        retention: args.retention.map_or(DEFAULT_RETENTION, Duration::from_secs_f64),
        capture: args.capture,
    };
    let broker = Broker::bind(&args.bind, options)
        .await
        .with_context(|| format!("cannot listen on {}", args.bind))?;
    qdnet::shutdown_signal().await;
    broker.shutdown().await;
    Ok(())
}
