//! Domain types shared by every layer of the protocol.

use std::fmt;
use std::sync::OnceLock;

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use crate::crypto::hash::{hash, Digest};

/// Simulated or wall-clock time, in microseconds.
pub type Time = u64;

/// Index of a replica in `[0, n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReplicaId(pub u32);

impl ReplicaId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// Globally unique request identifier: the submitting client and its own
/// sequence number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RequestId {
    pub client: u64,
    pub seq: u64,
}

impl RequestId {
    /// Canonical bytes; ordering of these bytes is the within-block execution order.
    pub fn to_bytes(self) -> [u8; 16] {
        let mut out = [0u8; 16];
        out[..8].copy_from_slice(&self.client.to_be_bytes());
        out[8..].copy_from_slice(&self.seq.to_be_bytes());
        out
    }
}

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}#{}", self.client, self.seq)
    }
}

/// A client request. Its wire size is `REQUEST_OVERHEAD + body.len()`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Request {
    pub id: RequestId,
    pub timeout_tag: bool,
    pub body: Bytes,
}

/// Encoded bytes of a request beyond its body: id (16), tag (1), body length (4).
pub const REQUEST_OVERHEAD: usize = 21;

impl Request {
    pub fn new(id: RequestId, body: Bytes) -> Self {
        Request {
            id,
            timeout_tag: false,
            body,
        }
    }

    pub fn wire_size(&self) -> usize {
        REQUEST_OVERHEAD + self.body.len()
    }
}

/// A batch of requests produced and disseminated by a non-leader replica.
pub struct Datablock {
    pub generator: ReplicaId,
    pub counter: u64,
    pub requests: Vec<Request>,
    digest: OnceLock<Digest>,
}

impl Datablock {
    pub fn new(generator: ReplicaId, counter: u64, requests: Vec<Request>) -> Self {
        Datablock {
            generator,
            counter,
            requests,
            digest: OnceLock::new(),
        }
    }

    /// `H(m)` over the canonical encoding, computed once per instance.
    pub fn digest(&self) -> Digest {
        *self.digest.get_or_init(|| hash(&crate::codec::encode_datablock(self)))
    }
}

impl Clone for Datablock {
    fn clone(&self) -> Self {
        Datablock {
            generator: self.generator,
            counter: self.counter,
            requests: self.requests.clone(),
            digest: self.digest.clone(),
        }
    }
}

impl PartialEq for Datablock {
    fn eq(&self, other: &Self) -> bool {
        self.generator == other.generator && self.counter == other.counter && self.requests == other.requests
    }
}

impl Eq for Datablock {}

impl fmt::Debug for Datablock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Datablock")
            .field("generator", &self.generator)
            .field("counter", &self.counter)
            .field("requests", &self.requests.len())
            .finish()
    }
}

/// The consensus proposal: links to datablocks, keyed by `(view, serial)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BftBlock {
    pub view: u64,
    pub serial: u64,
    pub content: Vec<Digest>,
    pub dummy: bool,
}

impl BftBlock {
    pub fn new(view: u64, serial: u64, content: Vec<Digest>) -> Self {
        BftBlock {
            view,
            serial,
            content,
            dummy: false,
        }
    }

    pub fn dummy(view: u64, serial: u64) -> Self {
        BftBlock {
            view,
            serial,
            content: Vec::new(),
            dummy: true,
        }
    }

    pub fn digest(&self) -> Digest {
        hash(&crate::codec::encode_block(self))
    }

    /// Whether two blocks decide the same thing for their serial. Re-proposals
    /// after a view change carry a new view number but identical content.
    pub fn same_decision(&self, other: &BftBlock) -> bool {
        self.serial == other.serial && self.dummy == other.dummy && self.content == other.content
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BlockState {
    Proposed,
    Notarized,
    Confirmed,
}
