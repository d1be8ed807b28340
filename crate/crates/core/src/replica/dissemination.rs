//! Client intake, datablock dissemination, Ready gating and proposing.

use std::sync::Arc;

use super::{Replica, TimerId};
use crate::crypto::Digest;
use crate::message::{Message, SignedProposal};
use crate::types::{BftBlock, Datablock, ReplicaId, Request};

const SECOND: u64 = 1_000_000;

impl Replica {
    pub(super) fn on_client_request(&mut self, req: Request) {
        let id = req.id;
        if self.executed_ids.contains(&id) {
            self.push(super::OutputAction::AckClient {
                client: id.client,
                ids: vec![id],
            });
            return;
        }
        self.client_origin.insert(id, id.client);
        if req.timeout_tag {
            self.watch_tagged(&req);
        }
        if !self.mempool_ids.insert(id) {
            return;
        }
        self.mempool.push_back(req);
        self.emit_datablocks(false);
    }

    /// Starts the view-change trigger timer for a timeout-tagged request.
    pub(super) fn watch_tagged(&mut self, req: &Request) {
        if self.executed_ids.contains(&req.id) || !self.tagged_pending.insert(req.id) {
            return;
        }
        let after = self.view_change_timeout();
        self.set_timer(TimerId::RequestTimeout(req.id), after);
    }

    /// Emits full batches; with `flush`, also a final partial one.
    pub(super) fn emit_datablocks(&mut self, flush: bool) {
        if self.is_leader() {
            return;
        }
        let batch = self.params.datablock_batch;
        while self.mempool.len() >= batch || (flush && !self.mempool.is_empty()) {
            if !self.rate_allows() {
                if !self.flush_armed {
                    self.flush_armed = true;
                    let wait = SECOND - self.now % SECOND;
                    self.set_timer(TimerId::DatablockFlush, wait);
                }
                return;
            }
            let take = batch.min(self.mempool.len());
            let requests: Vec<Request> = self.mempool.drain(..take).collect();
            for r in &requests {
                self.mempool_ids.remove(&r.id);
            }
            let db = Arc::new(Datablock::new(self.id, self.next_counter, requests));
            self.next_counter += 1;
            self.broadcast(Message::Datablock(db.clone()));
            self.store_datablock(db);
        }
        if !self.mempool.is_empty() && !self.flush_armed {
            self.flush_armed = true;
            let after = self.ms(self.params.datablock_flush_ms);
            self.set_timer(TimerId::DatablockFlush, after);
        }
    }

    fn rate_allows(&mut self) -> bool {
        let Some(limit) = self.params.rate_limit else {
            return true;
        };
        let second = self.now / SECOND;
        if self.emitted_in_second.0 != second {
            self.emitted_in_second = (second, 0);
        }
        if self.emitted_in_second.1 >= limit {
            return false;
        }
        self.emitted_in_second.1 += 1;
        true
    }

    /// Receiver-side throttle: a bucket of `2R` tokens refilled at `R` per second.
    fn admit(&mut self, generator: ReplicaId) -> bool {
        let Some(limit) = self.params.rate_limit else {
            return true;
        };
        let rate = limit as f64;
        let now = self.now;
        let b = self.buckets.entry(generator).or_insert(super::Bucket {
            tokens: 2.0 * rate,
            at: now,
        });
        b.tokens = (b.tokens + (now - b.at) as f64 * rate / SECOND as f64).min(2.0 * rate);
        b.at = now;
        if b.tokens < 1.0 {
            return false;
        }
        b.tokens -= 1.0;
        true
    }

    pub(super) fn on_datablock(&mut self, from: ReplicaId, db: Arc<Datablock>) {
        if db.generator != from
            || db.requests.is_empty()
            || db.requests.len() > self.params.datablock_batch
            || self.seen_counters.contains(&(db.generator, db.counter))
        {
            return;
        }
        if !self.admit(from) {
            return;
        }
        self.store_datablock(db);
    }

    /// Stores a fresh datablock, announces it to the leader and resumes any
    /// block that was waiting for it. Also the landing point for retrieval.
    pub(super) fn store_datablock(&mut self, db: Arc<Datablock>) {
        let digest = db.digest();
        self.seen_counters.insert((db.generator, db.counter));
        if self.pool.contains_key(&digest) {
            return;
        }
        for r in db.requests.iter().filter(|r| r.timeout_tag) {
            self.watch_tagged(r);
        }
        self.pool.insert(digest, db);
        if !self.log_linked.contains(&digest) {
            self.send_to_leader(Message::Ready {
                digest,
                sender: self.id,
            });
        }
        self.datablock_arrived(digest);
        if self.is_leader() {
            self.check_linkable(digest);
        }
    }

    pub(super) fn on_ready(&mut self, from: ReplicaId, digest: Digest) {
        if !self.is_leader() || self.log_linked.contains(&digest) {
            return;
        }
        self.ready.entry(digest).or_default().insert(from);
        self.check_linkable(digest);
    }

    /// Ready senders for `digest`, counting the leader itself when it holds the datablock.
    pub fn ready_count(&self, digest: &Digest) -> usize {
        let mut senders = self.ready.get(digest).cloned().unwrap_or_default();
        if self.pool.contains_key(digest) {
            senders.insert(self.id);
        }
        senders.len()
    }

    fn check_linkable(&mut self, digest: Digest) {
        if self.linkable_set.contains(&digest)
            || self.proposed_linked.contains(&digest)
            || self.log_linked.contains(&digest)
            || !self.pool.contains_key(&digest)
            || self.ready_count(&digest) < self.quorum()
        {
            return;
        }
        self.linkable_set.insert(digest);
        self.linkable.push_back(digest);
        self.try_propose(false);
    }

    fn window_open(&self) -> bool {
        self.next_serial <= self.lw + self.params.k && (self.open_instances.len() as u64) < self.params.k
    }

    /// Proposes blocks of up to τ linkable digests, oldest first. Without
    /// `force` only full blocks go out and a flush timer covers the rest.
    pub(super) fn try_propose(&mut self, force: bool) {
        if !self.is_leader() || self.mode != super::Mode::Normal {
            return;
        }
        let tau = self.params.tau;
        while !self.linkable.is_empty() && self.window_open() {
            if self.linkable.len() < tau && !force {
                break;
            }
            let take = tau.min(self.linkable.len());
            let content: Vec<Digest> = self.linkable.drain(..take).collect();
            for d in &content {
                self.linkable_set.remove(d);
                self.proposed_linked.insert(*d);
            }
            let block = BftBlock::new(self.view, self.next_serial, content);
            self.next_serial += 1;
            self.propose(block);
        }
        if !self.linkable.is_empty() && !self.propose_armed {
            self.propose_armed = true;
            let after = self.ms(self.params.propose_flush_ms);
            self.set_timer(TimerId::ProposeFlush, after);
        }
    }

    /// Signs and broadcasts `block`, then records the leader's own vote.
    pub(super) fn propose(&mut self, block: BftBlock) {
        let digest = block.digest();
        let share = self.keys.sign_share(self.id, &digest);
        self.open_instances.insert(block.serial);
        let proposal = SignedProposal { block, share };
        self.broadcast(Message::Proposal(proposal.clone()));
        self.on_proposal(proposal);
    }
}
