//! Leopard: a leader-based BFT protocol where non-leaders disseminate request
//! batches and the leader only orders their hashes.
//!
//! The crate holds the deterministic replica state machine, its cryptographic
//! primitives, a discrete-event partial-synchrony simulator and the
//! communication cost model used to check measured traffic.

pub mod codec;
pub mod crypto;
pub mod error;
pub mod idset;
pub mod log;
pub mod message;
pub mod metrics;
pub mod params;
pub mod replica;
pub mod simnet;
pub mod types;

pub use error::{ConfigError, CryptoError, DecodeError, LogError, MetricsError};
pub use message::{Category, Message};
pub use params::ProtocolParams;
pub use types::{BftBlock, Datablock, ReplicaId, Request, RequestId, Time};
