//! The per-node daemon.
//!
//! Each node runs two cooperating parts: an HTTP front serving the ETSI
//! GS QKD 014 key delivery API, and a bus handler that receives modeling
//! results, stores keys and wakes up the client waiting for them.

mod api;
mod service;
mod store;

pub use api::{router, ApiError};
pub use service::{NodeError, NodeService, NodeSettings, RunningNode, DEFAULT_ENGINE_TIMEOUT};
pub use store::{KeyStore, LookupError, StoredKey, DEFAULT_TTL};
