//! Reproduction runs against locally deployed networks.
//!
//! Every run deploys real broker, engine and node processes through the
//! orchestrator on loopback ports, drives them over the ETSI API and
//! writes its observations as CSV or JSON lines.

mod network;
pub mod scaling;
pub mod scenario;
pub mod stats;
pub mod sweep;

use std::path::Path;

use qdnet_core::topology::{parse_config, ConfigError, NetworkConfig};
use qdnet_relay::RelayError;
use serde::Serialize;
use thiserror::Error;

pub use network::{LocalNetwork, LocalOptions};

/// Four-node star with an eavesdropper on Quijote-Aquiles.
pub const MADRID_ADVERSARIAL: &str = include_str!("../../../../configs/madrid-adversarial.yaml");
/// The same star with fiber loss and no eavesdropper.
pub const MADRID_REALISTIC: &str = include_str!("../../../../configs/madrid-realistic.yaml");

/// Default wall-clock compression of harness runs.
pub const DEFAULT_TIME_SCALE: f64 = 50.0;

pub fn madrid_adversarial() -> NetworkConfig {
    parse_config(MADRID_ADVERSARIAL).expect("shipped configuration parses")
}

pub fn madrid_realistic() -> NetworkConfig {
    parse_config(MADRID_REALISTIC).expect("shipped configuration parses")
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Orchestrator(#[from] crate::orchestrator::OrchestratorError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Relay(#[from] RelayError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Missing(String),
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(row).expect("rows serialize"));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
