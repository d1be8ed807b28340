//! The protocol message catalog.

use std::sync::Arc;

use serde::Serialize;

use crate::codec;
use crate::crypto::hash::{hash, Digest};
use crate::crypto::{AggregateProof, ErasureChunk, Signature, VoteShare};
use crate::types::{BftBlock, Datablock, ReplicaId, Request, RequestId};

/// `⟨checkpoint, sn, H(st)⟩`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Checkpoint {
    pub serial: u64,
    pub state_hash: Digest,
}

impl Checkpoint {
    pub fn digest(&self) -> Digest {
        hash(&codec::encode_checkpoint(self))
    }
}

/// A checkpoint with its combined proof.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckpointCert {
    pub checkpoint: Checkpoint,
    pub proof: AggregateProof,
}

/// A block together with the leader's first-round share on it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignedProposal {
    pub block: BftBlock,
    pub share: VoteShare,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimeoutMsg {
    /// The view the sender wants to leave.
    pub view: u64,
    pub sender: ReplicaId,
    /// Two conflicting leader-signed proposals for one `(view, serial)`.
    pub evidence: Option<Box<(SignedProposal, SignedProposal)>>,
    pub signature: Signature,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ViewChangeMsg {
    pub new_view: u64,
    pub sender: ReplicaId,
    pub checkpoint: Option<CheckpointCert>,
    /// Notarized or confirmed blocks above the sender's low watermark, each
    /// with its notarization proof.
    pub notarized: Vec<(BftBlock, AggregateProof)>,
    pub signature: Signature,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NewViewMsg {
    pub view: u64,
    pub sender: ReplicaId,
    pub view_changes: Vec<ViewChangeMsg>,
    pub signature: Signature,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    ClientRequest(Request),
    ClientAck {
        replica: ReplicaId,
        view: u64,
        ids: Vec<RequestId>,
    },
    Datablock(Arc<Datablock>),
    Ready {
        digest: Digest,
        sender: ReplicaId,
    },
    Proposal(SignedProposal),
    PrepareShare(VoteShare),
    Notarization(AggregateProof),
    /// Second-round share; its digest is `H(notarization proof)`.
    CommitShare(VoteShare),
    Confirmation(AggregateProof),
    Query {
        digests: Vec<Digest>,
        sender: ReplicaId,
    },
    Response {
        sender: ReplicaId,
        chunk: ErasureChunk,
    },
    CheckpointShare {
        checkpoint: Checkpoint,
        share: VoteShare,
    },
    CheckpointProof(CheckpointCert),
    Timeout(TimeoutMsg),
    ViewChange(Arc<ViewChangeMsg>),
    NewView(Arc<NewViewMsg>),
    BlockQuery {
        digests: Vec<Digest>,
        sender: ReplicaId,
    },
    BlockResponse(SignedProposal),
}

/// Accounting bucket for a message.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Category {
    Datablock,
    Ready,
    BftBlock,
    PrepareShare,
    Notarization,
    CommitShare,
    Confirmation,
    Query,
    Resp,
    Checkpoint,
    ViewChange,
    ClientTraffic,
    Misc,
}

impl Category {
    pub const ALL: [Category; 13] = [
        Category::Datablock,
        Category::Ready,
        Category::BftBlock,
        Category::PrepareShare,
        Category::Notarization,
        Category::CommitShare,
        Category::Confirmation,
        Category::Query,
        Category::Resp,
        Category::Checkpoint,
        Category::ViewChange,
        Category::ClientTraffic,
        Category::Misc,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Datablock => "Datablock",
            Category::Ready => "Ready",
            Category::BftBlock => "BFTblock",
            Category::PrepareShare => "PrepareShare",
            Category::Notarization => "Notarization",
            Category::CommitShare => "CommitShare",
            Category::Confirmation => "Confirmation",
            Category::Query => "Query",
            Category::Resp => "Resp",
            Category::Checkpoint => "Checkpoint",
            Category::ViewChange => "ViewChange",
            Category::ClientTraffic => "ClientTraffic",
            Category::Misc => "Misc",
        }
    }
}

impl Message {
    pub fn category(&self) -> Category {
        match self {
            Message::ClientRequest(_) | Message::ClientAck { .. } => Category::ClientTraffic,
            Message::Datablock(_) => Category::Datablock,
            Message::Ready { .. } => Category::Ready,
            Message::Proposal(_) => Category::BftBlock,
            Message::PrepareShare(_) => Category::PrepareShare,
            Message::Notarization(_) => Category::Notarization,
            Message::CommitShare(_) => Category::CommitShare,
            Message::Confirmation(_) => Category::Confirmation,
            Message::Query { .. } => Category::Query,
            Message::Response { .. } => Category::Resp,
            Message::CheckpointShare { .. } | Message::CheckpointProof(_) => Category::Checkpoint,
            Message::Timeout(_) | Message::ViewChange(_) | Message::NewView(_) => Category::ViewChange,
            Message::BlockQuery { .. } | Message::BlockResponse(_) => Category::Misc,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Message::ClientRequest(_) => "ClientRequest",
            Message::ClientAck { .. } => "ClientAck",
            Message::Datablock(_) => "Datablock",
            Message::Ready { .. } => "Ready",
            Message::Proposal(_) => "Proposal",
            Message::PrepareShare(_) => "PrepareShare",
            Message::Notarization(_) => "Notarization",
            Message::CommitShare(_) => "CommitShare",
            Message::Confirmation(_) => "Confirmation",
            Message::Query { .. } => "Query",
            Message::Response { .. } => "Response",
            Message::CheckpointShare { .. } => "CheckpointShare",
            Message::CheckpointProof(_) => "CheckpointProof",
            Message::Timeout(_) => "Timeout",
            Message::ViewChange(_) => "ViewChange",
            Message::NewView(_) => "NewView",
            Message::BlockQuery { .. } => "BlockQuery",
            Message::BlockResponse(_) => "BlockResponse",
        }
    }

    /// Bytes on the wire: the length of the canonical encoding.
    pub fn wire_size(&self) -> usize {
        codec::encoded_len(self)
    }

    pub fn encode(&self) -> Vec<u8> {
        codec::encode(self)
    }
}

impl TimeoutMsg {
    pub fn signing_digest(&self) -> Digest {
        codec::timeout_signing_digest(self)
    }
}

impl ViewChangeMsg {
    pub fn signing_digest(&self) -> Digest {
        codec::view_change_signing_digest(self)
    }
}

impl NewViewMsg {
    pub fn signing_digest(&self) -> Digest {
        codec::new_view_signing_digest(self)
    }
}

/// `H(σ̂¹)`: the digest second-round shares sign.
pub fn notarization_digest(proof: &AggregateProof) -> Digest {
    hash(&codec::encode_proof(proof))
}
