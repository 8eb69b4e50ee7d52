use super::{BusEndpoint, ConfigError, HostEntry, Inventory, NetworkConfig};

/// One process the orchestrator launches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Role {
    Bus,
    Node(String),
    Engine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub role: Role,
    pub host: HostEntry,
}

/// Where every component of a network runs, and in which order it starts.
#[derive(Debug, Clone, PartialEq)]
pub struct DeploymentPlan {
    pub config: NetworkConfig,
    /// One entry per node, in configuration order.
    pub nodes: Vec<Assignment>,
    pub engine: Assignment,
    /// The broker is co-located with the engine.
    pub bus: Assignment,
    pub bus_endpoint: BusEndpoint,
}

impl DeploymentPlan {
    /// Launch order: broker, then every node, then the engine.
    pub fn launch_order(&self) -> Vec<&Assignment> {
        std::iter::once(&self.bus)
            .chain(self.nodes.iter())
            .chain(std::iter::once(&self.engine))
            .collect()
    }

    /// Node and engine processes placed on `host_name`.
    pub fn processes_on(&self, host_name: &str) -> usize {
        self.nodes
            .iter()
            .chain(std::iter::once(&self.engine))
            .filter(|a| a.host.host_name == host_name)
            .count()
    }

    /// Distinct hosts involved, in first-use order.
    pub fn hosts(&self) -> Vec<&HostEntry> {
        let mut hosts: Vec<&HostEntry> = Vec::new();
        for assignment in self.launch_order() {
            if !hosts.iter().any(|h| h.host_name == assignment.host.host_name) {
                hosts.push(&assignment.host);
            }
        }
        hosts
    }
}

/// Resolves every host referenced by `config` against `inventory`.
pub fn validate_pair(config: &NetworkConfig, inventory: &Inventory) -> Result<DeploymentPlan, ConfigError> {
    let resolve = |host: &str, referenced_by: String| {
        inventory
            .host(host)
            .cloned()
            .ok_or_else(|| ConfigError::UnresolvedHost {
                host: host.to_owned(),
                referenced_by,
            })
    };

    let nodes = config
        .nodes
        .iter()
        .map(|node| {
            Ok(Assignment {
                role: Role::Node(node.name.clone()),
                host: resolve(&node.host, format!("node {}", node.name))?,
            })
        })
        .collect::<Result<Vec<_>, ConfigError>>()?;
    let engine_host = resolve(&config.engine_host, "engine_host".to_owned())?;

    Ok(DeploymentPlan {
        config: config.clone(),
        nodes,
        engine: Assignment {
            role: Role::Engine,
            host: engine_host.clone(),
        },
        bus: Assignment {
            role: Role::Bus,
            host: engine_host,
        },
        bus_endpoint: config.bus_endpoint.clone(),
    })
}
