use std::path::{Path, PathBuf};
use std::time::Duration;

use qdnet_core::topology::{validate_pair, BusEndpoint, HostEntry, Inventory, NetworkConfig};
use qdnet_engine::{EventLog, LogRecord};
use qdnet_relay::{EtsiClient, NodeDirectory};
use tempfile::TempDir;

use super::HarnessError;
use crate::orchestrator::{self, Deployment, StartOptions, StopReport};

#[derive(Debug, Clone)]
pub struct LocalOptions {
    pub artifacts: PathBuf,
    pub time_scale: f64,
    pub seed: u64,
    pub node_ttl: Option<Duration>,
    pub capture_bus: bool,
}

impl LocalOptions {
    pub fn new(artifacts: impl Into<PathBuf>) -> Self {
        Self {
            artifacts: artifacts.into(),
            time_scale: super::DEFAULT_TIME_SCALE,
            seed: 0,
            node_ttl: None,
            capture_bus: false,
        }
    }
}

/// A network deployed on this machine with every host in its own
/// temporary working directory. Processes are killed when it is dropped.
pub struct LocalNetwork {
    pub deployment: Deployment,
    inventory: Inventory,
    dir: TempDir,
    stopped: bool,
}

fn free_port() -> std::io::Result<u16> {
    Ok(std::net::TcpListener::bind("127.0.0.1:0")?.local_addr()?.port())
}

impl LocalNetwork {
    /// Deploys `template` with fresh loopback ports for the broker and
    /// every node API.
    pub async fn deploy(template: &NetworkConfig, options: &LocalOptions) -> Result<Self, HarnessError> {
        let mut config = template.clone();
        for node in &mut config.nodes {
            node.api_port = free_port()?;
        }
        config.bus_endpoint = BusEndpoint {
            host: "127.0.0.1".into(),
            port: free_port()?,
        };
        let dir = tempfile::Builder::new().prefix("qdnet-").tempdir()?;
        let inventory = Inventory {
            hosts: config
                .referenced_hosts()
                .into_iter()
                .map(|name| HostEntry {
                    workdir: Some(dir.path().join(name)),
                    ..HostEntry::local(name)
                })
                .collect(),
        };
        let plan = validate_pair(&config, &inventory)?;
        let start = StartOptions {
            time_scale: Some(options.time_scale),
            seed: options.seed,
            node_ttl: options.node_ttl,
            capture_bus: options.capture_bus,
            ..StartOptions::new(&options.artifacts)
        };
        let deployment = orchestrator::start(&plan, &start).await?;
        Ok(Self {
            deployment,
            inventory,
            dir,
            stopped: false,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.deployment.plan.config
    }

    pub fn inventory(&self) -> &Inventory {
        &self.inventory
    }

    /// Scratch directory that lives as long as the network.
    pub fn scratch(&self) -> &Path {
        self.dir.path()
    }

    pub fn directory(&self) -> NodeDirectory {
        NodeDirectory::from_config(self.config(), Some(&self.inventory))
    }

    pub fn client(&self, node: &str) -> EtsiClient {
        self.directory().client(node).expect("node is deployed")
    }

    pub fn sae(&self, node: &str) -> String {
        self.config().node(node).expect("node is deployed").sae_id.clone()
    }

    pub fn engine_records(&self) -> Vec<LogRecord> {
        EventLog::read(&self.deployment.engine_log()).unwrap_or_default()
    }

    pub async fn shutdown(mut self) -> StopReport {
        self.stopped = true;
        orchestrator::stop(&self.inventory).await
    }
}

impl Drop for LocalNetwork {
    fn drop(&mut self) {
        if self.stopped {
            return;
        }
        for process in &self.deployment.processes {
            let _ = std::process::Command::new("kill")
                .arg("-KILL")
                .arg(process.pid.to_string())
                .status();
        }
    }
}
