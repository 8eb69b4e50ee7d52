use qdnet_core::topology::NetworkConfig;

use crate::RelayError;

/// Nodes a relayed key passes through, initiator first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelayPath {
    nodes: Vec<String>,
}

impl RelayPath {
    pub fn new(config: &NetworkConfig, nodes: Vec<String>) -> Result<Self, RelayError> {
        if nodes.len() < 3 {
            return Err(RelayError::PathTooShort(nodes.len()));
        }
        for node in &nodes {
            if config.node(node).is_none() {
                return Err(RelayError::UnknownNode(node.clone()));
            }
        }
        for pair in nodes.windows(2) {
            if config.link_between(&pair[0], &pair[1]).is_none() {
                return Err(RelayError::NotAdjacent(pair[0].clone(), pair[1].clone()));
            }
        }
        Ok(Self { nodes })
    }

    /// Parses a comma-separated node list.
    pub fn parse(config: &NetworkConfig, list: &str) -> Result<Self, RelayError> {
        Self::new(config, list.split(',').map(|s| s.trim().to_owned()).collect())
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn initiator(&self) -> &str {
        &self.nodes[0]
    }

    pub fn target(&self) -> &str {
        self.nodes.last().expect("paths are non-empty")
    }

    /// Consecutive (upstream, downstream) pairs.
    pub fn hops(&self) -> impl Iterator<Item = (&str, &str)> {
        self.nodes.windows(2).map(|w| (w[0].as_str(), w[1].as_str()))
    }
}
