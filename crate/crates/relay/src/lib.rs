//! Trusted-node key relay.
//!
//! Two nodes without a direct QKD link share a key by chaining hop keys:
//! the initiator draws a random end-to-end key, one-time-pads it with the
//! first hop key, and every trusted node on the path swaps the pad for the
//! next hop's key until the target removes the last one. Hop keys are
//! obtained through the ordinary ETSI GS QKD 014 API of each node; the
//! padded payload travels between per-node [`RelayAgent`]s over plain TCP
//! using the bus frame format.

mod agent;
mod client;
mod pad;
mod path;
mod relay;

pub use agent::{AgentDirectory, FrameTap, HopPayload, RelayAgent};
pub use client::{EtsiClient, NodeDirectory};
pub use pad::{forward_hop, xor_pad};
pub use path::RelayPath;
pub use relay::{PreparedRelay, RelayOutcome, Relayer};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RelayError {
    #[error("a relay path needs at least three nodes, got {0}; use a direct key request")]
    PathTooShort(usize),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("`{0}` and `{1}` are not adjacent")]
    NotAdjacent(String, String),
    #[error("pad of {pad} bytes does not match payload of {data} bytes")]
    LengthMismatch { pad: usize, data: usize },
    #[error("key size must be a positive multiple of 8 bits, got {0}")]
    InvalidSize(u32),
    #[error("node {node} answered {status}: {message}")]
    Api { node: String, status: u16, message: String },
    #[error("cannot reach {0}")]
    Unreachable(String),
    #[error("relay failed at {node}: {message}")]
    Hop { node: String, message: String },
    #[error("hop key {0} was already used")]
    KeyReused(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}
