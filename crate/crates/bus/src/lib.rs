//! A small publish/subscribe message bus.
//!
//! Messages are addressed by routing key. The [`Broker`] fans every
//! published message out to the current subscribers of its key, and keeps
//! it in a volatile retained queue for a while when nobody is subscribed.
//! [`BusClient`] connects to a broker, publishes with acknowledgement and
//! multiplexes any number of subscriptions over one connection.
//!
//! The wire format is a 4-byte big-endian length followed by a UTF-8 JSON
//! [`Frame`].

mod broker;
mod client;
mod frame;
mod message;

pub use broker::{Broker, BrokerHandle, BrokerOptions, DEFAULT_RETENTION};
pub use client::{BusClient, ClientOptions, ConnectionState, Subscription};
pub use frame::{read_frame, write_frame, Frame, Op, MAX_FRAME_LEN};
pub use message::{BusMessage, MessageKind};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BusError {
    #[error("bus i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("frame of {len} bytes exceeds the {MAX_FRAME_LEN}-byte limit")]
    Oversized { len: usize },
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("broker at {0} is unreachable")]
    Unreachable(String),
    #[error("not connected to the broker")]
    Disconnected,
    #[error("no acknowledgement within {0:?}")]
    AckTimeout(std::time::Duration),
    #[error("broker rejected the message: {0}")]
    Rejected(String),
    #[error("payload does not match kind {kind:?}: {reason}")]
    PayloadMismatch { kind: MessageKind, reason: String },
}
