//! Recovering missing datablocks from erasure-coded responses.

use std::sync::Arc;

use super::{Replica, TimerId};
use crate::codec;
use crate::crypto::{erasure, hash, Digest, ErasureChunk};
use crate::message::Message;
use crate::types::ReplicaId;

impl Replica {
    /// Registers `block` as waiting on `missing` and arms its query timer.
    pub(super) fn start_retrieval(&mut self, block: Digest, missing: Vec<Digest>) {
        for d in missing {
            self.waiting_on.entry(d).or_default().insert(block);
        }
        if self.retrieval_armed.insert(block) {
            let after = self.ms(self.params.retrieval_timer_ms);
            self.set_timer(TimerId::Retrieval(block), after);
        }
    }

    pub(super) fn on_retrieval_timer(&mut self, block: Digest) {
        self.retrieval_armed.remove(&block);
        if !self.pending_votes.contains(&block) && !self.awaiting_exec.contains(&block) {
            return;
        }
        let missing = self.missing_of(&block);
        if missing.is_empty() {
            return;
        }
        self.broadcast(Message::Query {
            digests: missing.clone(),
            sender: self.id,
        });
        // Holders answer each querier once; the retry only reaches late holders.
        self.retrieval_armed.insert(block);
        let after = 4 * self.ms(self.params.retrieval_timer_ms);
        self.set_timer(TimerId::Retrieval(block), after);
    }

    pub(super) fn on_query(&mut self, from: ReplicaId, digests: &[Digest]) {
        for d in digests {
            if !self.pool.contains_key(d) || !self.answered_queries.insert((from, *d)) {
                continue;
            }
            let chunk = self.own_chunk(d);
            self.send(from, Message::Response { sender: self.id, chunk });
        }
    }

    fn own_chunk(&mut self, d: &Digest) -> ErasureChunk {
        if let Some(c) = self.own_chunks.get(d) {
            return c.clone();
        }
        let bytes = codec::encode_datablock(&self.pool[d]);
        let mut all = erasure::encode_authenticated(&bytes, self.f(), self.n()).expect("valid erasure parameters");
        let chunk = all.swap_remove(self.id.index());
        self.own_chunks.insert(*d, chunk.clone());
        chunk
    }

    pub(super) fn on_response(&mut self, from: ReplicaId, chunk: ErasureChunk) {
        if self.waiting_on.is_empty() {
            self.chunks.clear();
            return;
        }
        if chunk.index != from.0 || self.bad_roots.contains(&chunk.root) || !chunk.verify() {
            return;
        }
        let root = chunk.root;
        let set = self.chunks.entry(root).or_default();
        set.insert(chunk.index, chunk);
        if set.len() < self.f() + 1 {
            return;
        }
        let set = self.chunks.remove(&root).unwrap();
        let parts: Vec<(u32, &[u8])> = set.values().map(|c| (c.index, c.data.as_slice())).collect();
        let decoded = erasure::decode(&parts, self.f(), self.n())
            .ok()
            .filter(|bytes| self.waiting_on.contains_key(&hash(bytes)))
            .and_then(|bytes| codec::decode_datablock(&bytes).ok());
        match decoded {
            Some(db) => self.store_datablock(Arc::new(db)),
            None => {
                self.bad_roots.insert(root);
            }
        }
    }
}
