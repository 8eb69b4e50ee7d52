use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::ConfigError;

/// Devices available to host the emulated network.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inventory {
    pub hosts: Vec<HostEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConnectionMode {
    #[default]
    Local,
    Ssh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostEntry {
    pub host_name: String,
    /// Network address; defaults to `127.0.0.1` for local hosts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub address: Option<String>,
    #[serde(default)]
    pub connection: ConnectionMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
    /// Opaque credential reference; for ssh, the path of an identity file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub port: Option<u16>,
    /// Directory the orchestrator installs artifacts and pid files into.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workdir: Option<PathBuf>,
}

impl HostEntry {
    pub fn local(host_name: impl Into<String>) -> Self {
        Self {
            host_name: host_name.into(),
            address: None,
            connection: ConnectionMode::Local,
            user: None,
            auth: None,
            port: None,
            workdir: None,
        }
    }

    pub fn address(&self) -> &str {
        self.address.as_deref().unwrap_or("127.0.0.1")
    }

    /// Working directory on the host, `<tmp>/qdnet/<host_name>` by default.
    pub fn workdir(&self) -> PathBuf {
        match &self.workdir {
            Some(dir) => dir.clone(),
            None => {
                let base = match self.connection {
                    ConnectionMode::Local => std::env::temp_dir(),
                    ConnectionMode::Ssh => PathBuf::from("/tmp"),
                };
                base.join("qdnet").join(&self.host_name)
            }
        }
    }
}

impl Inventory {
    pub fn host(&self, name: &str) -> Option<&HostEntry> {
        self.hosts.iter().find(|h| h.host_name == name)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("inventory serializes")
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInventory {
    hosts: Vec<HostEntry>,
}

pub fn parse_inventory(document: &str) -> Result<Inventory, ConfigError> {
    let raw: RawInventory = serde_yaml::from_str(document).map_err(ConfigError::from_yaml)?;
    let mut seen = HashSet::new();
    for host in &raw.hosts {
        if host.host_name.trim().is_empty() {
            return Err(ConfigError::EmptyHostName);
        }
        if !seen.insert(host.host_name.as_str()) {
            return Err(ConfigError::DuplicateHost(host.host_name.clone()));
        }
        if host.connection == ConnectionMode::Ssh
            && host.address.as_deref().is_none_or(|a| a.trim().is_empty())
        {
            return Err(ConfigError::MissingAddress(host.host_name.clone()));
        }
    }
    Ok(Inventory { hosts: raw.hosts })
}
