//! Shared building blocks for the `qdnet` QKD network emulator.
//!
//! This crate holds everything that does not need a network socket:
//!
//! * [`topology`]: the declarative network configuration and device
//!   inventory, their validation, and the resulting [`topology::DeploymentPlan`].
//! * [`quantum`]: seedable BB84 channel models ("BB84 with Eve" and
//!   "Extended BB84"), QBER estimation, secure-key reduction and timing.
//! * [`messages`]: the modeling request/result bodies exchanged over the bus.
//! * [`etsi`]: request and response bodies of the ETSI GS QKD 014 key
//!   delivery API.
//! * [`bits`]: a small bit-string type used for key material.

pub mod bits;
pub mod etsi;
pub mod messages;
pub mod quantum;
pub mod topology;

pub use bits::BitString;
