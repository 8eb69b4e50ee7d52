//! Network configuration and device inventory documents.
//!
//! Both documents are YAML. The configuration lists nodes, QKD links and
//! where the engine and broker live; the inventory lists the devices and
//! how to reach them. [`validate_pair`] joins the two into a
//! [`DeploymentPlan`].

mod config;
mod inventory;
mod plan;

use thiserror::Error;

pub use crate::quantum::EveDecl;
use crate::quantum::ParamError;
pub use config::{
    parse_config, BusEndpoint, EngineOptions, LinkDecl, NetworkConfig, NodeDecl, ProtocolKind,
};
pub use inventory::{parse_inventory, ConnectionMode, HostEntry, Inventory};
pub use plan::{validate_pair, Assignment, DeploymentPlan, Role};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("document is not valid: {0}")]
    Malformed(String),
    #[error("node name must not be empty")]
    EmptyNodeName,
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),
    #[error("node `{0}` has an empty sae_id")]
    EmptySaeId(String),
    #[error("duplicate sae_id `{0}`")]
    DuplicateSaeId(String),
    #[error("node `{node}`: api_port {port} outside [1, 65535]")]
    InvalidPort { node: String, port: i64 },
    #[error("unknown endpoint `{0}`")]
    UnknownEndpoint(String),
    #[error("link endpoints must differ (`{0}` twice)")]
    SelfLink(String),
    #[error("more than one link between `{a}` and `{b}`")]
    DuplicateLink { a: String, b: String },
    #[error("link {link}: negative length {value}")]
    NegativeLength { link: String, value: f64 },
    #[error("link {link}: negative attenuation {value}")]
    NegativeAttenuation { link: String, value: f64 },
    #[error("link {0}: attenuation_db and attenuation_db_per_km are mutually exclusive")]
    ConflictingAttenuation(String),
    #[error("link {link}: protocol `{protocol}` does not support an eavesdropper")]
    EveNotAdmitted { link: String, protocol: String },
    #[error("link {link}: eavesdropper {source}")]
    InvalidEve { link: String, source: ParamError },
    #[error("link {link}: {source}")]
    InvalidParams { link: String, source: ParamError },
    #[error("link {0}: protocol name must not be empty")]
    EmptyProtocol(String),
    #[error("engine_host must not be empty")]
    EmptyEngineHost,
    #[error("invalid bus_endpoint: {0}")]
    InvalidBusEndpoint(String),
    #[error("time_scale must be positive, got {0}")]
    InvalidTimeScale(f64),
    #[error("engine_options.max_rounds must be at least 1")]
    InvalidMaxRounds,
    #[error("host_name must not be empty")]
    EmptyHostName,
    #[error("duplicate host `{0}`")]
    DuplicateHost(String),
    #[error("ssh host `{0}` has no address")]
    MissingAddress(String),
    #[error("host `{host}` referenced by {referenced_by} is not in the inventory")]
    UnresolvedHost { host: String, referenced_by: String },
}

impl ConfigError {
    fn from_yaml(err: serde_yaml::Error) -> Self {
        match err.location() {
            Some(loc) => ConfigError::Syntax {
                line: loc.line(),
                column: loc.column(),
                message: err.to_string(),
            },
            None => ConfigError::Malformed(err.to_string()),
        }
    }
}
