//! The modeling engine.
//!
//! It consumes [`ModelingRequest`](qdnet_core::messages::ModelingRequest)s
//! from the bus, checks them against the deployed topology, runs protocol
//! rounds until enough key material exists, and publishes the result to
//! both nodes once the emulated generation time has elapsed in wall-clock
//! time. Requests on one link are handled strictly one after another;
//! different links progress independently.

mod fulfill;
mod log;
mod schedule;
mod service;

pub use fulfill::{fulfill, Fulfillment, LinkBuffer, RoundReport};
pub use log::{EventLog, LogRecord};
pub use schedule::LinkSchedule;
pub use service::{validate_request, Engine, EngineError, EngineSettings, LinkCounters, RequestError};
