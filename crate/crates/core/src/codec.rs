//! Canonical byte encoding.
//!
//! Every message starts with a one-byte type tag. Integers are fixed-width
//! big-endian; variable-length fields (byte strings, lists) carry a `u32`
//! length prefix; optional fields carry a `0`/`1` presence byte. The encoding
//! is what gets hashed, signed, framed on sockets and counted by the metrics.

use std::sync::Arc;

use bytes::Bytes;

use crate::crypto::hash::{hash, Digest};
use crate::crypto::merkle::{MerkleProof, Side};
use crate::crypto::threshold::SigBytes;
use crate::crypto::{AggregateProof, ErasureChunk, Signature, VoteShare};
use crate::error::DecodeError;
use crate::message::{Checkpoint, CheckpointCert, Message, NewViewMsg, SignedProposal, TimeoutMsg, ViewChangeMsg};
use crate::params::{BETA, KAPPA};
use crate::types::{BftBlock, Datablock, ReplicaId, Request, RequestId, REQUEST_OVERHEAD};

pub mod tag {
    pub const CLIENT_REQUEST: u8 = 0x01;
    pub const CLIENT_ACK: u8 = 0x02;
    pub const DATABLOCK: u8 = 0x03;
    pub const READY: u8 = 0x04;
    pub const PROPOSAL: u8 = 0x05;
    pub const PREPARE_SHARE: u8 = 0x06;
    pub const NOTARIZATION: u8 = 0x07;
    pub const COMMIT_SHARE: u8 = 0x08;
    pub const CONFIRMATION: u8 = 0x09;
    pub const QUERY: u8 = 0x0a;
    pub const RESPONSE: u8 = 0x0b;
    pub const CHECKPOINT_SHARE: u8 = 0x0c;
    pub const CHECKPOINT_PROOF: u8 = 0x0d;
    pub const TIMEOUT: u8 = 0x0e;
    pub const VIEW_CHANGE: u8 = 0x0f;
    pub const NEW_VIEW: u8 = 0x10;
    pub const BLOCK_QUERY: u8 = 0x11;
    pub const BLOCK_RESPONSE: u8 = 0x12;

    // Standalone objects that are hashed on their own.
    pub const BLOCK: u8 = 0x40;
    pub const DATABLOCK_BODY: u8 = 0x41;
    pub const CHECKPOINT: u8 = 0x42;
    pub const PROOF: u8 = 0x43;
}

// ---------------------------------------------------------------------------
// Writer
// ---------------------------------------------------------------------------

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn with_capacity(cap: usize) -> Self {
        Writer {
            buf: Vec::with_capacity(cap),
        }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    fn bool(&mut self, v: bool) {
        self.u8(v as u8);
    }

    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("length fits in u32"));
    }

    fn bytes(&mut self, b: &[u8]) {
        self.len(b.len());
        self.buf.extend_from_slice(b);
    }

    fn digest(&mut self, d: &Digest) {
        self.buf.extend_from_slice(&d.0);
    }

    fn replica(&mut self, r: ReplicaId) {
        self.u32(r.0);
    }

    fn sig(&mut self, s: &SigBytes) {
        self.buf.extend_from_slice(&s.0);
    }

    fn digests(&mut self, ds: &[Digest]) {
        self.len(ds.len());
        for d in ds {
            self.digest(d);
        }
    }

    fn request_id(&mut self, id: RequestId) {
        self.u64(id.client);
        self.u64(id.seq);
    }

    fn request(&mut self, r: &Request) {
        self.request_id(r.id);
        self.bool(r.timeout_tag);
        self.bytes(&r.body);
    }

    fn datablock(&mut self, db: &Datablock) {
        self.u8(tag::DATABLOCK_BODY);
        self.replica(db.generator);
        self.u64(db.counter);
        self.len(db.requests.len());
        for r in &db.requests {
            self.request(r);
        }
    }

    fn block(&mut self, b: &BftBlock) {
        self.u8(tag::BLOCK);
        self.u64(b.view);
        self.u64(b.serial);
        self.bool(b.dummy);
        self.digests(&b.content);
    }

    fn share(&mut self, s: &VoteShare) {
        self.replica(s.signer);
        self.digest(&s.message_digest);
        self.sig(&s.share);
    }

    fn proof(&mut self, p: &AggregateProof) {
        self.digest(&p.message_digest);
        self.sig(&p.proof);
    }

    fn signature(&mut self, s: &Signature) {
        self.replica(s.signer);
        self.sig(&s.sig);
    }

    fn checkpoint(&mut self, c: &Checkpoint) {
        self.u64(c.serial);
        self.digest(&c.state_hash);
    }

    fn checkpoint_cert(&mut self, c: &CheckpointCert) {
        self.checkpoint(&c.checkpoint);
        self.proof(&c.proof);
    }

    fn signed_proposal(&mut self, p: &SignedProposal) {
        self.block(&p.block);
        self.share(&p.share);
    }

    fn merkle_proof(&mut self, p: &MerkleProof) {
        self.len(p.path.len());
        for (d, side) in &p.path {
            self.digest(d);
            self.u8(match side {
                Side::Left => 0,
                Side::Right => 1,
            });
        }
    }

    fn chunk(&mut self, c: &ErasureChunk) {
        self.digest(&c.root);
        self.u32(c.index);
        self.bytes(&c.data);
        self.merkle_proof(&c.proof);
    }

    fn timeout_body(&mut self, t: &TimeoutMsg) {
        self.u64(t.view);
        self.replica(t.sender);
        match &t.evidence {
            None => self.u8(0),
            Some(pair) => {
                self.u8(1);
                self.signed_proposal(&pair.0);
                self.signed_proposal(&pair.1);
            }
        }
    }

    fn view_change_body(&mut self, v: &ViewChangeMsg) {
        self.u64(v.new_view);
        self.replica(v.sender);
        match &v.checkpoint {
            None => self.u8(0),
            Some(c) => {
                self.u8(1);
                self.checkpoint_cert(c);
            }
        }
        self.len(v.notarized.len());
        for (b, p) in &v.notarized {
            self.block(b);
            self.proof(p);
        }
    }

    fn view_change(&mut self, v: &ViewChangeMsg) {
        self.view_change_body(v);
        self.signature(&v.signature);
    }

    fn new_view_body(&mut self, nv: &NewViewMsg) {
        self.u64(nv.view);
        self.replica(nv.sender);
        self.len(nv.view_changes.len());
        for v in &nv.view_changes {
            self.view_change(v);
        }
    }

    fn message(&mut self, m: &Message) {
        match m {
            Message::ClientRequest(r) => {
                self.u8(tag::CLIENT_REQUEST);
                self.request(r);
            }
            Message::ClientAck { replica, view, ids } => {
                self.u8(tag::CLIENT_ACK);
                self.replica(*replica);
                self.u64(*view);
                self.len(ids.len());
                for id in ids {
                    self.request_id(*id);
                }
            }
            Message::Datablock(db) => {
                self.u8(tag::DATABLOCK);
                self.datablock(db);
            }
            Message::Ready { digest, sender } => {
                self.u8(tag::READY);
                self.digest(digest);
                self.replica(*sender);
            }
            Message::Proposal(p) => {
                self.u8(tag::PROPOSAL);
                self.signed_proposal(p);
            }
            Message::PrepareShare(s) => {
                self.u8(tag::PREPARE_SHARE);
                self.share(s);
            }
            Message::Notarization(p) => {
                self.u8(tag::NOTARIZATION);
                self.proof(p);
            }
            Message::CommitShare(s) => {
                self.u8(tag::COMMIT_SHARE);
                self.share(s);
            }
            Message::Confirmation(p) => {
                self.u8(tag::CONFIRMATION);
                self.proof(p);
            }
            Message::Query { digests, sender } => {
                self.u8(tag::QUERY);
                self.digests(digests);
                self.replica(*sender);
            }
            Message::Response { sender, chunk } => {
                self.u8(tag::RESPONSE);
                self.chunk(chunk);
                self.replica(*sender);
            }
            Message::CheckpointShare { checkpoint, share } => {
                self.u8(tag::CHECKPOINT_SHARE);
                self.checkpoint(checkpoint);
                self.share(share);
            }
            Message::CheckpointProof(c) => {
                self.u8(tag::CHECKPOINT_PROOF);
                self.checkpoint_cert(c);
            }
            Message::Timeout(t) => {
                self.u8(tag::TIMEOUT);
                self.timeout_body(t);
                self.signature(&t.signature);
            }
            Message::ViewChange(v) => {
                self.u8(tag::VIEW_CHANGE);
                self.view_change(v);
            }
            Message::NewView(nv) => {
                self.u8(tag::NEW_VIEW);
                self.new_view_body(nv);
                self.signature(&nv.signature);
            }
            Message::BlockQuery { digests, sender } => {
                self.u8(tag::BLOCK_QUERY);
                self.digests(digests);
                self.replica(*sender);
            }
            Message::BlockResponse(p) => {
                self.u8(tag::BLOCK_RESPONSE);
                self.signed_proposal(p);
            }
        }
    }
}

pub fn encode(m: &Message) -> Vec<u8> {
    let mut w = Writer::with_capacity(64);
    w.message(m);
    w.buf
}

fn datablock_len(db: &Datablock) -> usize {
    // tag, generator, counter, request count, then fixed-layout requests.
    1 + 4
        + 8
        + 4
        + db.requests
            .iter()
            .map(|r| REQUEST_OVERHEAD + r.body.len())
            .sum::<usize>()
}

/// Length of [`encode`] without materializing large payloads.
pub fn encoded_len(m: &Message) -> usize {
    match m {
        Message::Datablock(db) => 1 + datablock_len(db),
        Message::ClientRequest(r) => 1 + r.wire_size(),
        Message::ClientAck { ids, .. } => 1 + 4 + 8 + 4 + 16 * ids.len(),
        Message::Response { chunk, .. } => {
            1 + BETA + 4 + 4 + chunk.data.len() + 4 + (BETA + 1) * chunk.proof.path.len() + 4
        }
        _ => encode(m).len(),
    }
}

pub fn encode_datablock(db: &Datablock) -> Vec<u8> {
    let mut w = Writer::with_capacity(datablock_len(db));
    w.datablock(db);
    w.buf
}

pub fn encode_block(b: &BftBlock) -> Vec<u8> {
    let mut w = Writer::with_capacity(1 + 8 + 8 + 1 + 4 + BETA * b.content.len());
    w.block(b);
    w.buf
}

pub fn encode_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::with_capacity(1 + 8 + BETA);
    w.u8(tag::CHECKPOINT);
    w.checkpoint(c);
    w.buf
}

pub fn encode_proof(p: &AggregateProof) -> Vec<u8> {
    let mut w = Writer::with_capacity(1 + BETA + KAPPA);
    w.u8(tag::PROOF);
    w.proof(p);
    w.buf
}

pub fn encode_request_ids(ids: &[RequestId]) -> Vec<u8> {
    let mut w = Writer::with_capacity(4 + 16 * ids.len());
    w.len(ids.len());
    for id in ids {
        w.request_id(*id);
    }
    w.buf
}

pub fn timeout_signing_digest(t: &TimeoutMsg) -> Digest {
    let mut w = Writer::with_capacity(64);
    w.u8(tag::TIMEOUT);
    w.timeout_body(t);
    hash(&w.buf)
}

pub fn view_change_signing_digest(v: &ViewChangeMsg) -> Digest {
    let mut w = Writer::with_capacity(256);
    w.u8(tag::VIEW_CHANGE);
    w.view_change_body(v);
    hash(&w.buf)
}

pub fn new_view_signing_digest(nv: &NewViewMsg) -> Digest {
    let mut w = Writer::with_capacity(1024);
    w.u8(tag::NEW_VIEW);
    w.new_view_body(nv);
    hash(&w.buf)
}

// ---------------------------------------------------------------------------
// Reader
// ---------------------------------------------------------------------------

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

type Res<T> = Result<T, DecodeError>;

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Res<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(DecodeError::UnexpectedEof)?;
        if end > self.buf.len() {
            return Err(DecodeError::UnexpectedEof);
        }
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Res<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Res<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Res<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bool(&mut self) -> Res<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(DecodeError::Invalid("boolean")),
        }
    }

    /// A list length, sanity-checked against the remaining input.
    fn len(&mut self, min_item: usize) -> Res<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_item.max(1)) > self.buf.len() - self.pos {
            return Err(DecodeError::UnexpectedEof);
        }
        Ok(n)
    }

    fn bytes(&mut self) -> Res<&'a [u8]> {
        let n = self.len(1)?;
        self.take(n)
    }

    fn expect(&mut self, t: u8) -> Res<()> {
        let got = self.u8()?;
        if got != t {
            return Err(DecodeError::UnknownTag(got));
        }
        Ok(())
    }

    fn digest(&mut self) -> Res<Digest> {
        Ok(Digest(self.take(BETA)?.try_into().unwrap()))
    }

    fn replica(&mut self) -> Res<ReplicaId> {
        Ok(ReplicaId(self.u32()?))
    }

    fn sig(&mut self) -> Res<SigBytes> {
        Ok(SigBytes(self.take(KAPPA)?.try_into().unwrap()))
    }

    fn digests(&mut self) -> Res<Vec<Digest>> {
        let n = self.len(BETA)?;
        (0..n).map(|_| self.digest()).collect()
    }

    fn request_id(&mut self) -> Res<RequestId> {
        Ok(RequestId {
            client: self.u64()?,
            seq: self.u64()?,
        })
    }

    fn request(&mut self) -> Res<Request> {
        Ok(Request {
            id: self.request_id()?,
            timeout_tag: self.bool()?,
            body: Bytes::copy_from_slice(self.bytes()?),
        })
    }

    fn datablock(&mut self) -> Res<Datablock> {
        self.expect(tag::DATABLOCK_BODY)?;
        let generator = self.replica()?;
        let counter = self.u64()?;
        let n = self.len(REQUEST_OVERHEAD)?;
        let requests = (0..n).map(|_| self.request()).collect::<Res<_>>()?;
        Ok(Datablock::new(generator, counter, requests))
    }

    fn block(&mut self) -> Res<BftBlock> {
        self.expect(tag::BLOCK)?;
        Ok(BftBlock {
            view: self.u64()?,
            serial: self.u64()?,
            dummy: self.bool()?,
            content: self.digests()?,
        })
    }

    fn share(&mut self) -> Res<VoteShare> {
        Ok(VoteShare {
            signer: self.replica()?,
            message_digest: self.digest()?,
            share: self.sig()?,
        })
    }

    fn proof(&mut self) -> Res<AggregateProof> {
        Ok(AggregateProof {
            message_digest: self.digest()?,
            proof: self.sig()?,
        })
    }

    fn signature(&mut self) -> Res<Signature> {
        Ok(Signature {
            signer: self.replica()?,
            sig: self.sig()?,
        })
    }

    fn checkpoint(&mut self) -> Res<Checkpoint> {
        Ok(Checkpoint {
            serial: self.u64()?,
            state_hash: self.digest()?,
        })
    }

    fn checkpoint_cert(&mut self) -> Res<CheckpointCert> {
        Ok(CheckpointCert {
            checkpoint: self.checkpoint()?,
            proof: self.proof()?,
        })
    }

    fn signed_proposal(&mut self) -> Res<SignedProposal> {
        Ok(SignedProposal {
            block: self.block()?,
            share: self.share()?,
        })
    }

    fn merkle_proof(&mut self) -> Res<MerkleProof> {
        let n = self.len(BETA + 1)?;
        let path = (0..n)
            .map(|_| {
                let d = self.digest()?;
                let side = match self.u8()? {
                    0 => Side::Left,
                    1 => Side::Right,
                    _ => return Err(DecodeError::Invalid("merkle side")),
                };
                Ok((d, side))
            })
            .collect::<Res<_>>()?;
        Ok(MerkleProof { path })
    }

    fn chunk(&mut self) -> Res<ErasureChunk> {
        Ok(ErasureChunk {
            root: self.digest()?,
            index: self.u32()?,
            data: self.bytes()?.to_vec(),
            proof: self.merkle_proof()?,
        })
    }

    fn option<T>(&mut self, f: impl FnOnce(&mut Self) -> Res<T>) -> Res<Option<T>> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(f(self)?)),
            _ => Err(DecodeError::Invalid("option flag")),
        }
    }

    fn view_change(&mut self) -> Res<ViewChangeMsg> {
        let new_view = self.u64()?;
        let sender = self.replica()?;
        let checkpoint = self.option(Self::checkpoint_cert)?;
        let n = self.len(BETA)?;
        let notarized = (0..n).map(|_| Ok((self.block()?, self.proof()?))).collect::<Res<_>>()?;
        Ok(ViewChangeMsg {
            new_view,
            sender,
            checkpoint,
            notarized,
            signature: self.signature()?,
        })
    }

    fn message(&mut self) -> Res<Message> {
        let t = self.u8()?;
        Ok(match t {
            tag::CLIENT_REQUEST => Message::ClientRequest(self.request()?),
            tag::CLIENT_ACK => {
                let replica = self.replica()?;
                let view = self.u64()?;
                let n = self.len(16)?;
                let ids = (0..n).map(|_| self.request_id()).collect::<Res<_>>()?;
                Message::ClientAck { replica, view, ids }
            }
            tag::DATABLOCK => Message::Datablock(Arc::new(self.datablock()?)),
            tag::READY => Message::Ready {
                digest: self.digest()?,
                sender: self.replica()?,
            },
            tag::PROPOSAL => Message::Proposal(self.signed_proposal()?),
            tag::PREPARE_SHARE => Message::PrepareShare(self.share()?),
            tag::NOTARIZATION => Message::Notarization(self.proof()?),
            tag::COMMIT_SHARE => Message::CommitShare(self.share()?),
            tag::CONFIRMATION => Message::Confirmation(self.proof()?),
            tag::QUERY => Message::Query {
                digests: self.digests()?,
                sender: self.replica()?,
            },
            tag::RESPONSE => Message::Response {
                chunk: self.chunk()?,
                sender: self.replica()?,
            },
            tag::CHECKPOINT_SHARE => Message::CheckpointShare {
                checkpoint: self.checkpoint()?,
                share: self.share()?,
            },
            tag::CHECKPOINT_PROOF => Message::CheckpointProof(self.checkpoint_cert()?),
            tag::TIMEOUT => {
                let view = self.u64()?;
                let sender = self.replica()?;
                let evidence = self.option(|r| Ok(Box::new((r.signed_proposal()?, r.signed_proposal()?))))?;
                Message::Timeout(TimeoutMsg {
                    view,
                    sender,
                    evidence,
                    signature: self.signature()?,
                })
            }
            tag::VIEW_CHANGE => Message::ViewChange(Arc::new(self.view_change()?)),
            tag::NEW_VIEW => {
                let view = self.u64()?;
                let sender = self.replica()?;
                let n = self.len(4)?;
                let view_changes = (0..n).map(|_| self.view_change()).collect::<Res<_>>()?;
                Message::NewView(Arc::new(NewViewMsg {
                    view,
                    sender,
                    view_changes,
                    signature: self.signature()?,
                }))
            }
            tag::BLOCK_QUERY => Message::BlockQuery {
                digests: self.digests()?,
                sender: self.replica()?,
            },
            tag::BLOCK_RESPONSE => Message::BlockResponse(self.signed_proposal()?),
            other => return Err(DecodeError::UnknownTag(other)),
        })
    }
}

pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let m = r.message()?;
    if r.pos != bytes.len() {
        return Err(DecodeError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(m)
}

/// Inverse of [`encode_datablock`]; used when a datablock is rebuilt from
/// erasure chunks.
pub fn decode_datablock(bytes: &[u8]) -> Result<Datablock, DecodeError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let db = r.datablock()?;
    if r.pos != bytes.len() {
        return Err(DecodeError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::hash::hash;

    fn block(serial: u64) -> BftBlock {
        BftBlock::new(3, serial, vec![hash(b"a"), hash(b"b")])
    }

    #[test]
    fn equal_blocks_encode_identically() {
        assert_eq!(encode_block(&block(1)), encode_block(&block(1)));
        assert_ne!(encode_block(&block(1)), encode_block(&block(2)));
    }

    #[test]
    fn dummy_flag_changes_digest() {
        let a = BftBlock::new(2, 5, vec![]);
        let b = BftBlock::dummy(2, 5);
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn truncated_and_padded_inputs_rejected() {
        let m = Message::Ready {
            digest: hash(b"x"),
            sender: ReplicaId(2),
        };
        let bytes = encode(&m);
        assert_eq!(decode(&bytes).unwrap(), m);
        assert_eq!(decode(&bytes[..bytes.len() - 1]), Err(DecodeError::UnexpectedEof));
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(decode(&long), Err(DecodeError::TrailingBytes(1)));
        assert_eq!(decode(&[0xff]), Err(DecodeError::UnknownTag(0xff)));
    }

    #[test]
    fn datablock_body_round_trips() {
        let db = Datablock::new(
            ReplicaId(3),
            9,
            vec![Request::new(
                RequestId { client: 1, seq: 2 },
                Bytes::from_static(b"abc"),
            )],
        );
        let bytes = encode_datablock(&db);
        let back = decode_datablock(&bytes).unwrap();
        assert_eq!(back, db);
        assert_eq!(back.digest(), db.digest());
    }

    #[test]
    fn huge_length_prefix_does_not_allocate() {
        let mut bytes = vec![tag::QUERY];
        bytes.extend_from_slice(&u32::MAX.to_be_bytes());
        assert_eq!(decode(&bytes), Err(DecodeError::UnexpectedEof));
    }
}
