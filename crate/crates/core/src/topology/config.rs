use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ConfigError;
use crate::quantum::{EveDecl, LinkPhysics, ProtocolParams, BB84_WITH_EVE, EXTENDED_BB84};

/// Declarative description of the emulated network.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkConfig {
    pub nodes: Vec<NodeDecl>,
    pub links: Vec<LinkDecl>,
    pub engine_host: String,
    pub bus_endpoint: BusEndpoint,
    /// Wall-clock compression: emulated latencies are divided by this.
    pub time_scale: f64,
    pub engine_options: EngineOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeDecl {
    pub name: String,
    pub sae_id: String,
    pub api_port: u16,
    /// Inventory host the node runs on.
    pub host: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkDecl {
    pub endpoint_a: String,
    pub endpoint_b: String,
    pub length_km: f64,
    /// Total fiber loss of the span.
    pub attenuation_db: f64,
    pub protocol: ProtocolKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eve: Option<EveDecl>,
    pub phys: ProtocolParams,
}

impl LinkDecl {
    /// Stable human-readable identifier, `A-B` in declaration order.
    pub fn id(&self) -> String {
        format!("{}-{}", self.endpoint_a, self.endpoint_b)
    }

    pub fn joins(&self, x: &str, y: &str) -> bool {
        (self.endpoint_a == x && self.endpoint_b == y) || (self.endpoint_a == y && self.endpoint_b == x)
    }

    pub fn other_end(&self, node: &str) -> Option<&str> {
        if self.endpoint_a == node {
            Some(&self.endpoint_b)
        } else if self.endpoint_b == node {
            Some(&self.endpoint_a)
        } else {
            None
        }
    }

    pub fn physics(&self) -> LinkPhysics {
        LinkPhysics {
            length_km: self.length_km,
            total_attenuation_db: self.attenuation_db,
            eve: self.eve.clone(),
        }
    }
}

/// Name of the protocol model run on a link.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ProtocolKind {
    Bb84WithEve,
    ExtendedBb84,
    /// A protocol registered with the engine under this name.
    Custom(String),
}

impl ProtocolKind {
    pub fn as_str(&self) -> &str {
        match self {
            ProtocolKind::Bb84WithEve => BB84_WITH_EVE,
            ProtocolKind::ExtendedBb84 => EXTENDED_BB84,
            ProtocolKind::Custom(name) => name,
        }
    }

    /// Whether the model knows how to place an eavesdropper on the link.
    pub fn admits_eavesdropper(&self) -> bool {
        !matches!(self, ProtocolKind::Custom(_))
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<&str> for ProtocolKind {
    fn from(name: &str) -> Self {
        match name {
            BB84_WITH_EVE => ProtocolKind::Bb84WithEve,
            EXTENDED_BB84 => ProtocolKind::ExtendedBb84,
            other => ProtocolKind::Custom(other.to_owned()),
        }
    }
}

impl Serialize for ProtocolKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ProtocolKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        Ok(ProtocolKind::from(name.as_str()))
    }
}

/// `host:port` of the message broker.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BusEndpoint {
    pub host: String,
    pub port: u16,
}

impl fmt::Display for BusEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.host, self.port)
    }
}

impl FromStr for BusEndpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (host, port) = s
            .rsplit_once(':')
            .ok_or_else(|| format!("`{s}` is not of the form host:port"))?;
        let port: u16 = port.parse().map_err(|_| format!("`{port}` is not a valid port"))?;
        if host.is_empty() || port == 0 {
            return Err(format!("`{s}` is not of the form host:port"));
        }
        Ok(Self {
            host: host.to_owned(),
            port,
        })
    }
}

impl Serialize for BusEndpoint {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

/// Engine behaviour switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineOptions {
    /// Keep surplus secure bits of a round for later requests on the link.
    pub buffer_leftover: bool,
    /// Abort instead of releasing divergent keys on eavesdropped links.
    pub strict_abort: bool,
    /// Round budget per request before giving up.
    pub max_rounds: u32,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            buffer_leftover: true,
            strict_abort: false,
            max_rounds: 100,
        }
    }
}

impl NetworkConfig {
    pub fn node(&self, name: &str) -> Option<&NodeDecl> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn node_by_sae(&self, sae_id: &str) -> Option<&NodeDecl> {
        self.nodes.iter().find(|n| n.sae_id == sae_id)
    }

    /// Index and declaration of the link joining `x` and `y`, if any.
    pub fn link_between(&self, x: &str, y: &str) -> Option<(usize, &LinkDecl)> {
        self.links.iter().enumerate().find(|(_, l)| l.joins(x, y))
    }

    pub fn neighbors<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.links.iter().filter_map(move |l| l.other_end(node))
    }

    /// Whether `to` is reachable from `from` over QKD links.
    pub fn has_route(&self, from: &str, to: &str) -> bool {
        if from == to {
            return self.node(from).is_some();
        }
        let mut seen = HashSet::from([from]);
        let mut queue = VecDeque::from([from]);
        while let Some(current) = queue.pop_front() {
            for next in self.neighbors(current) {
                if next == to {
                    return true;
                }
                if seen.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        false
    }

    /// Every inventory host this configuration refers to.
    pub fn referenced_hosts(&self) -> BTreeSet<&str> {
        self.nodes
            .iter()
            .map(|n| n.host.as_str())
            .chain(std::iter::once(self.engine_host.as_str()))
            .collect()
    }

    /// YAML rendering that [`parse_config`] reads back to an equal value.
    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("network configuration serializes")
    }
}

// --- raw document shape --------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    nodes: Vec<RawNode>,
    #[serde(default)]
    links: Vec<RawLink>,
    engine_host: String,
    bus_endpoint: String,
    #[serde(default = "default_time_scale")]
    time_scale: f64,
    #[serde(default)]
    engine_options: EngineOptions,
}

fn default_time_scale() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    name: String,
    sae_id: Option<String>,
    api_port: i64,
    host: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    endpoint_a: String,
    endpoint_b: String,
    #[serde(default)]
    length_km: f64,
    attenuation_db: Option<f64>,
    attenuation_db_per_km: Option<f64>,
    #[serde(default = "default_protocol")]
    protocol: ProtocolKind,
    eve: Option<EveDecl>,
    #[serde(default)]
    phys: ProtocolParams,
}

fn default_protocol() -> ProtocolKind {
    ProtocolKind::Bb84WithEve
}

/// Parses and validates a network configuration document.
pub fn parse_config(document: &str) -> Result<NetworkConfig, ConfigError> {
    let raw: RawConfig = serde_yaml::from_str(document).map_err(ConfigError::from_yaml)?;

    let mut nodes = Vec::with_capacity(raw.nodes.len());
    let mut names = HashSet::new();
    let mut sae_ids = HashSet::new();
    for node in raw.nodes {
        if node.name.trim().is_empty() {
            return Err(ConfigError::EmptyNodeName);
        }
        if !names.insert(node.name.clone()) {
            return Err(ConfigError::DuplicateNode(node.name));
        }
        let sae_id = node.sae_id.unwrap_or_else(|| node.name.clone());
        if sae_id.trim().is_empty() {
            return Err(ConfigError::EmptySaeId(node.name));
        }
        if !sae_ids.insert(sae_id.clone()) {
            return Err(ConfigError::DuplicateSaeId(sae_id));
        }
        let api_port = u16::try_from(node.api_port)
            .ok()
            .filter(|&p| p != 0)
            .ok_or(ConfigError::InvalidPort {
                node: node.name.clone(),
                port: node.api_port,
            })?;
        let host = node.host.unwrap_or_else(|| node.name.clone());
        nodes.push(NodeDecl {
            name: node.name,
            sae_id,
            api_port,
            host,
        });
    }

    let mut links = Vec::with_capacity(raw.links.len());
    let mut pairs = HashMap::new();
    for raw_link in raw.links {
        let link = resolve_link(raw_link, &names)?;
        let pair = if link.endpoint_a < link.endpoint_b {
            (link.endpoint_a.clone(), link.endpoint_b.clone())
        } else {
            (link.endpoint_b.clone(), link.endpoint_a.clone())
        };
        if pairs.insert(pair, ()).is_some() {
            return Err(ConfigError::DuplicateLink {
                a: link.endpoint_a,
                b: link.endpoint_b,
            });
        }
        links.push(link);
    }

    if raw.engine_host.trim().is_empty() {
        return Err(ConfigError::EmptyEngineHost);
    }
    let bus_endpoint = raw
        .bus_endpoint
        .parse()
        .map_err(ConfigError::InvalidBusEndpoint)?;
    if !(raw.time_scale.is_finite() && raw.time_scale > 0.0) {
        return Err(ConfigError::InvalidTimeScale(raw.time_scale));
    }
    if raw.engine_options.max_rounds == 0 {
        return Err(ConfigError::InvalidMaxRounds);
    }

    Ok(NetworkConfig {
        nodes,
        links,
        engine_host: raw.engine_host,
        bus_endpoint,
        time_scale: raw.time_scale,
        engine_options: raw.engine_options,
    })
}

fn resolve_link(raw: RawLink, names: &HashSet<String>) -> Result<LinkDecl, ConfigError> {
    for endpoint in [&raw.endpoint_a, &raw.endpoint_b] {
        if !names.contains(endpoint) {
            return Err(ConfigError::UnknownEndpoint(endpoint.clone()));
        }
    }
    if raw.endpoint_a == raw.endpoint_b {
        return Err(ConfigError::SelfLink(raw.endpoint_a));
    }
    let id = format!("{}-{}", raw.endpoint_a, raw.endpoint_b);
    if !(raw.length_km.is_finite() && raw.length_km >= 0.0) {
        return Err(ConfigError::NegativeLength {
            link: id,
            value: raw.length_km,
        });
    }
    let attenuation_db = match (raw.attenuation_db, raw.attenuation_db_per_km) {
        (Some(_), Some(_)) => return Err(ConfigError::ConflictingAttenuation(id)),
        (Some(total), None) => total,
        (None, Some(per_km)) => per_km * raw.length_km,
        (None, None) => 0.0,
    };
    if !(attenuation_db.is_finite() && attenuation_db >= 0.0) {
        return Err(ConfigError::NegativeAttenuation {
            link: id,
            value: attenuation_db,
        });
    }
    if let Some(eve) = &raw.eve {
        if !raw.protocol.admits_eavesdropper() {
            return Err(ConfigError::EveNotAdmitted {
                link: id,
                protocol: raw.protocol.to_string(),
            });
        }
        eve.validate(raw.length_km)
            .map_err(|source| ConfigError::InvalidEve { link: id.clone(), source })?;
    }
    if let ProtocolKind::Custom(name) = &raw.protocol {
        if name.trim().is_empty() {
            return Err(ConfigError::EmptyProtocol(id));
        }
    }
    raw.phys
        .validate()
        .map_err(|source| ConfigError::InvalidParams { link: id, source })?;

    Ok(LinkDecl {
        endpoint_a: raw.endpoint_a,
        endpoint_b: raw.endpoint_b,
        length_km: raw.length_km,
        attenuation_db,
        protocol: raw.protocol,
        eve: raw.eve,
        phys: raw.phys,
    })
}
