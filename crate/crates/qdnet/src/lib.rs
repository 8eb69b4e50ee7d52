//! Orchestration and reproduction harness for the emulated QKD network.
//!
//! [`orchestrator`] deploys and tears down a network described by a
//! configuration and an inventory; [`harness`] drives deployed networks
//! through the event-ordering scenario, the realistic-channel sweep and the
//! deployment scaling runs.

pub mod harness;
pub mod orchestrator;
pub mod remote;

use std::path::Path;

use anyhow::Context;
use qdnet_core::topology::{parse_config, parse_inventory, Inventory, NetworkConfig};

pub fn load_config(path: &Path) -> anyhow::Result<NetworkConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_config(&text).with_context(|| format!("invalid configuration {}", path.display()))
}

pub fn load_inventory(path: &Path) -> anyhow::Result<Inventory> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_inventory(&text).with_context(|| format!("invalid inventory {}", path.display()))
}

/// Logs to stderr, filtered by `RUST_LOG` (default `info`).
pub fn init_tracing() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    #[cfg(unix)]
    {
        let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate())
            .expect("SIGTERM handler installs");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = tokio::signal::ctrl_c().await;
}
