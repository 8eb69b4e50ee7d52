//! Bodies of the messages exchanged between nodes and the modeling engine.
//!
//! Nodes publish a [`ModelingRequest`] under [`ENGINE_ROUTING_KEY`]. After
//! the emulated latency the engine publishes one [`ModelingResult`] under
//! each participant's routing key (see [`node_routing_key`]).

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::BitString;

/// Routing key the modeling engine consumes.
pub const ENGINE_ROUTING_KEY: &str = "engine";

/// Routing key a node consumes.
pub fn node_routing_key(node: &str) -> String {
    format!("node.{node}")
}

/// Seconds since the Unix epoch, as carried in message timestamps.
pub fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelingRequest {
    pub request_id: Uuid,
    pub initiator: String,
    pub peer: String,
    pub bits_needed: u64,
    /// Unix seconds at which the initiating node accepted the client call.
    pub received_at: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RequestError {
    #[error("bits_needed must be at least 1")]
    ZeroBits,
    #[error("initiator and peer are the same node `{0}`")]
    SameNode(String),
}

impl ModelingRequest {
    pub fn new(initiator: impl Into<String>, peer: impl Into<String>, bits_needed: u64) -> Self {
        Self {
            request_id: Uuid::new_v4(),
            initiator: initiator.into(),
            peer: peer.into(),
            bits_needed,
            received_at: unix_now(),
        }
    }

    pub fn validate(&self) -> Result<(), RequestError> {
        if self.bits_needed == 0 {
            return Err(RequestError::ZeroBits);
        }
        if self.initiator == self.peer {
            return Err(RequestError::SameNode(self.initiator.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultStatus {
    Ok,
    /// Delivered, but the two sides hold different bits.
    Compromised,
    /// The request was rejected or could not be fulfilled.
    Error,
}

/// Which participant a published result is addressed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipient {
    Initiator,
    Peer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelingResult {
    pub request_id: Uuid,
    /// Identifier the key is stored under on both nodes. Equal to the
    /// request identifier.
    pub key_id: Uuid,
    pub initiator: String,
    pub peer: String,
    pub status: ResultStatus,
    /// Key bits for the initiator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_material: Option<BitString>,
    /// Key bits for the peer. Equal to `key_material` unless compromised.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer_key_material: Option<BitString>,
    pub qber: f64,
    pub simulated_duration_s: f64,
    #[serde(default)]
    pub rounds: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Set on published copies; `None` on the engine-internal full result.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipient: Option<Recipient>,
}

impl ModelingResult {
    pub fn error(req: &ModelingRequest, message: impl Into<String>) -> Self {
        Self {
            request_id: req.request_id,
            key_id: req.request_id,
            initiator: req.initiator.clone(),
            peer: req.peer.clone(),
            status: ResultStatus::Error,
            key_material: None,
            peer_key_material: None,
            qber: 0.0,
            simulated_duration_s: 0.0,
            rounds: 0,
            error: Some(message.into()),
            recipient: None,
        }
    }

    /// The copy sent to one participant, carrying only that side's bits.
    pub fn addressed_to(&self, recipient: Recipient) -> Self {
        let mut copy = self.clone();
        copy.recipient = Some(recipient);
        match recipient {
            Recipient::Initiator => copy.peer_key_material = None,
            Recipient::Peer => copy.key_material = None,
        }
        copy
    }

    /// Bits meant for `recipient`, if the message carries them.
    pub fn material_for(&self, recipient: Recipient) -> Option<&BitString> {
        match recipient {
            Recipient::Initiator => self.key_material.as_ref(),
            Recipient::Peer => self.peer_key_material.as_ref(),
        }
    }

    /// Node name a copy for `recipient` is routed to.
    pub fn node_of(&self, recipient: Recipient) -> &str {
        match recipient {
            Recipient::Initiator => &self.initiator,
            Recipient::Peer => &self.peer,
        }
    }
}
