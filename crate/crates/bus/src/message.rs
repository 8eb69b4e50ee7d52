use qdnet_core::messages::{node_routing_key, ModelingRequest, ModelingResult, Recipient, ENGINE_ROUTING_KEY};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::{BusError, Frame, Op};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    ModelingRequest,
    ModelingResult,
    /// Trusted-node relay traffic between key management agents.
    RelayHop,
}

/// An application message travelling over the bus.
#[derive(Debug, Clone, PartialEq)]
pub struct BusMessage {
    pub routing_key: String,
    pub kind: MessageKind,
    pub message_id: Uuid,
    pub payload: serde_json::Value,
    pub sent_at: f64,
}

impl BusMessage {
    pub fn new<T: Serialize>(routing_key: impl Into<String>, kind: MessageKind, body: &T) -> Self {
        Self {
            routing_key: routing_key.into(),
            kind,
            message_id: Uuid::new_v4(),
            payload: serde_json::to_value(body).expect("message bodies serialize"),
            sent_at: qdnet_core::messages::unix_now(),
        }
    }

    /// A request addressed to the modeling engine.
    pub fn modeling_request(req: &ModelingRequest) -> Self {
        Self::new(ENGINE_ROUTING_KEY, MessageKind::ModelingRequest, req)
    }

    /// The copy of `result` destined for one participant.
    pub fn modeling_result(result: &ModelingResult, recipient: Recipient) -> Self {
        let copy = result.addressed_to(recipient);
        Self::new(
            node_routing_key(result.node_of(recipient)),
            MessageKind::ModelingResult,
            &copy,
        )
    }

    pub fn decode<T: DeserializeOwned>(&self) -> Result<T, BusError> {
        serde_json::from_value(self.payload.clone()).map_err(|e| BusError::PayloadMismatch {
            kind: self.kind,
            reason: e.to_string(),
        })
    }

    /// Checks that the payload is a body of the declared kind.
    pub fn check_payload(&self) -> Result<(), BusError> {
        match self.kind {
            MessageKind::ModelingRequest => self.decode::<ModelingRequest>().map(drop),
            MessageKind::ModelingResult => self.decode::<ModelingResult>().map(drop),
            MessageKind::RelayHop => match self.payload.is_object() {
                true => Ok(()),
                false => Err(BusError::PayloadMismatch {
                    kind: self.kind,
                    reason: "relay payload must be an object".into(),
                }),
            },
        }
    }

    pub fn to_frame(&self) -> Frame {
        Frame {
            op: Op::Publish,
            routing_key: self.routing_key.clone(),
            kind: Some(self.kind),
            message_id: Some(self.message_id),
            payload: Some(self.payload.clone()),
            sent_at: Some(self.sent_at),
            error: None,
        }
    }

    pub fn from_frame(frame: Frame) -> Result<Self, BusError> {
        if frame.op != Op::Publish {
            return Err(BusError::Malformed(format!("expected publish, got {:?}", frame.op)));
        }
        let missing = |field: &str| BusError::Malformed(format!("publish frame without {field}"));
        Ok(Self {
            kind: frame.kind.ok_or_else(|| missing("kind"))?,
            message_id: frame.message_id.ok_or_else(|| missing("message_id"))?,
            payload: frame.payload.ok_or_else(|| missing("payload"))?,
            sent_at: frame.sent_at.unwrap_or_default(),
            routing_key: frame.routing_key,
        })
    }
}
