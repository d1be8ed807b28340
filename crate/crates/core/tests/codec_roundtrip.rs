use std::collections::HashSet;
use std::sync::Arc;

use bytes::Bytes;
use leopard_core::codec;
use leopard_core::crypto::merkle::{MerkleProof, Side};
use leopard_core::crypto::threshold::SigBytes;
use leopard_core::crypto::{AggregateProof, Digest, ErasureChunk, Signature, VoteShare};
use leopard_core::message::{Checkpoint, CheckpointCert, NewViewMsg, SignedProposal, TimeoutMsg, ViewChangeMsg};
use leopard_core::{BftBlock, Datablock, Message, ReplicaId, Request, RequestId};
use proptest::prelude::*;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Gen(ChaCha8Rng);

impl Gen {
    fn digest(&mut self) -> Digest {
        let mut d = [0u8; 32];
        self.0.fill_bytes(&mut d);
        Digest(d)
    }
    fn sig(&mut self) -> SigBytes {
        let mut s = [0u8; 48];
        self.0.fill_bytes(&mut s);
        SigBytes(s)
    }
    fn rid(&mut self) -> ReplicaId {
        ReplicaId(self.0.gen_range(0..300))
    }
    fn small(&mut self) -> u64 {
        self.0.gen_range(0..1_000_000)
    }
    fn digests(&mut self) -> Vec<Digest> {
        let n = self.0.gen_range(0..5);
        (0..n).map(|_| self.digest()).collect()
    }
    fn request(&mut self) -> Request {
        let len = self.0.gen_range(0..40);
        let mut body = vec![0u8; len];
        self.0.fill_bytes(&mut body);
        Request {
            id: RequestId {
                client: self.small(),
                seq: self.small(),
            },
            timeout_tag: self.0.gen(),
            body: Bytes::from(body),
        }
    }
    fn block(&mut self) -> BftBlock {
        if self.0.gen_bool(0.2) {
            BftBlock::dummy(self.small(), self.small())
        } else {
            let v = self.small();
            let s = self.small();
            let c = self.digests();
            BftBlock::new(v, s, c)
        }
    }
    fn share(&mut self) -> VoteShare {
        VoteShare {
            signer: self.rid(),
            message_digest: self.digest(),
            share: self.sig(),
        }
    }
    fn proof(&mut self) -> AggregateProof {
        AggregateProof {
            message_digest: self.digest(),
            proof: self.sig(),
        }
    }
    fn signature(&mut self) -> Signature {
        Signature {
            signer: self.rid(),
            sig: self.sig(),
        }
    }
    fn checkpoint(&mut self) -> Checkpoint {
        Checkpoint {
            serial: self.small(),
            state_hash: self.digest(),
        }
    }
    fn cert(&mut self) -> CheckpointCert {
        CheckpointCert {
            checkpoint: self.checkpoint(),
            proof: self.proof(),
        }
    }
    fn proposal(&mut self) -> SignedProposal {
        SignedProposal {
            block: self.block(),
            share: self.share(),
        }
    }
    fn view_change(&mut self) -> ViewChangeMsg {
        let n = self.0.gen_range(0..3);
        ViewChangeMsg {
            new_view: self.small(),
            sender: self.rid(),
            checkpoint: if self.0.gen() { Some(self.cert()) } else { None },
            notarized: (0..n).map(|_| (self.block(), self.proof())).collect(),
            signature: self.signature(),
        }
    }

    fn message(&mut self) -> Message {
        match self.0.gen_range(0..18) {
            0 => Message::ClientRequest(self.request()),
            1 => {
                let n = self.0.gen_range(0..4);
                Message::ClientAck {
                    replica: self.rid(),
                    view: self.small(),
                    ids: (0..n).map(|_| self.request().id).collect(),
                }
            }
            2 => {
                let n = self.0.gen_range(0..4);
                let reqs = (0..n).map(|_| self.request()).collect();
                Message::Datablock(Arc::new(Datablock::new(self.rid(), self.small(), reqs)))
            }
            3 => Message::Ready {
                digest: self.digest(),
                sender: self.rid(),
            },
            4 => Message::Proposal(self.proposal()),
            5 => Message::PrepareShare(self.share()),
            6 => Message::Notarization(self.proof()),
            7 => Message::CommitShare(self.share()),
            8 => Message::Confirmation(self.proof()),
            9 => Message::Query {
                digests: self.digests(),
                sender: self.rid(),
            },
            10 => {
                let len = self.0.gen_range(0..64);
                let mut data = vec![0u8; len];
                self.0.fill_bytes(&mut data);
                let depth = self.0.gen_range(0..6);
                let path = (0..depth)
                    .map(|_| (self.digest(), if self.0.gen() { Side::Left } else { Side::Right }))
                    .collect();
                Message::Response {
                    sender: self.rid(),
                    chunk: ErasureChunk {
                        index: self.0.gen_range(0..256),
                        data,
                        root: self.digest(),
                        proof: MerkleProof { path },
                    },
                }
            }
            11 => Message::CheckpointShare {
                checkpoint: self.checkpoint(),
                share: self.share(),
            },
            12 => Message::CheckpointProof(self.cert()),
            13 => Message::Timeout(TimeoutMsg {
                view: self.small(),
                sender: self.rid(),
                evidence: if self.0.gen() {
                    Some(Box::new((self.proposal(), self.proposal())))
                } else {
                    None
                },
                signature: self.signature(),
            }),
            14 => Message::ViewChange(Arc::new(self.view_change())),
            15 => {
                let n = self.0.gen_range(0..3);
                Message::NewView(Arc::new(NewViewMsg {
                    view: self.small(),
                    sender: self.rid(),
                    view_changes: (0..n).map(|_| self.view_change()).collect(),
                    signature: self.signature(),
                }))
            }
            16 => Message::BlockQuery {
                digests: self.digests(),
                sender: self.rid(),
            },
            _ => Message::BlockResponse(self.proposal()),
        }
    }
}

#[test]
fn corpus_round_trips_and_is_injective() {
    let mut g = Gen(ChaCha8Rng::seed_from_u64(0xc0dec));
    let mut seen_bytes = HashSet::new();
    let mut seen_msgs = Vec::new();
    let mut kinds = HashSet::new();
    while seen_msgs.len() < 10_000 {
        let m = g.message();
        let bytes = codec::encode(&m);
        assert_eq!(bytes.len(), m.wire_size(), "{}", m.kind());
        let back = codec::decode(&bytes).unwrap();
        assert_eq!(back, m);
        kinds.insert(m.kind());
        if seen_bytes.insert(bytes) {
            seen_msgs.push(m);
        }
    }
    assert_eq!(kinds.len(), 18);
    // Distinct encodings came from distinct messages; no two distinct messages share bytes.
    let distinct: HashSet<Vec<u8>> = seen_msgs.iter().map(codec::encode).collect();
    assert_eq!(distinct.len(), seen_msgs.len());
}

proptest! {
    #[test]
    fn random_messages_round_trip(seed in any::<u64>()) {
        let mut g = Gen(ChaCha8Rng::seed_from_u64(seed));
        for _ in 0..20 {
            let m = g.message();
            let bytes = codec::encode(&m);
            prop_assert_eq!(bytes.len(), m.wire_size());
            prop_assert_eq!(codec::decode(&bytes).unwrap(), m);
        }
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
        let _ = codec::decode(&bytes);
    }

    #[test]
    fn decoded_garbage_reencodes_identically(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
        if let Ok(m) = codec::decode(&bytes) {
            prop_assert_eq!(codec::encode(&m), bytes);
        }
    }
}
