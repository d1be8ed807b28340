//! Two-round agreement on blocks, logging and execution.

use std::collections::BTreeMap;

use super::{leader_of, BlockEntry, Mode, Note, OutputAction, Replica, TimerId};
use crate::crypto::hash::hash_parts;
use crate::crypto::{AggregateProof, Digest, VoteShare};
use crate::log::block_request_ids;
use crate::message::{notarization_digest, Message, SignedProposal, TimeoutMsg};
use crate::types::{BlockState, ReplicaId, RequestId};

impl Replica {
    /// Entry point for proposals and fetched blocks.
    pub(super) fn on_proposal(&mut self, p: SignedProposal) {
        let digest = p.block.digest();
        let leader = leader_of(p.block.view, self.n());
        if p.share.signer != leader || !self.keys.verify_share(&p.share, &digest) {
            return;
        }
        let slot = (p.block.view, p.block.serial);
        match self.slots.get(&slot) {
            Some(first) if first.block.digest() != digest && !self.vote_once_disabled() => {
                let evidence = Box::new((first.clone(), p.clone()));
                self.on_equivocation(evidence);
            }
            Some(_) => {}
            None => {
                self.slots.insert(slot, p.clone());
            }
        }
        if let std::collections::hash_map::Entry::Vacant(slot) = self.blocks.entry(digest) {
            slot.insert(BlockEntry {
                block: p.block.clone(),
                leader_share: p.share,
                state: BlockState::Proposed,
                notarization: None,
                confirmation: None,
                commit_sent: false,
            });
            self.unknown_blocks.remove(&digest);
            if p.block.view > self.view {
                self.future_blocks.entry(p.block.view).or_default().push(digest);
            }
            if let Some(proof) = self.cached_notarizations.remove(&digest) {
                self.on_notarization(proof);
            }
        }
        self.try_vote(digest);
    }

    fn on_equivocation(&mut self, evidence: Box<(SignedProposal, SignedProposal)>) {
        let view = evidence.0.block.view;
        if view < self.view {
            return;
        }
        self.start_view_change(view + 1, Some(evidence));
    }

    /// Whether `(a, b)` proves that the leader of their view signed two
    /// different blocks for one serial.
    pub(super) fn valid_evidence(&self, pair: &(SignedProposal, SignedProposal)) -> bool {
        let (a, b) = pair;
        let (da, db) = (a.block.digest(), b.block.digest());
        let leader = leader_of(a.block.view, self.n());
        a.block.view == b.block.view
            && a.block.serial == b.block.serial
            && da != db
            && a.share.signer == leader
            && b.share.signer == leader
            && self.keys.verify_share(&a.share, &da)
            && self.keys.verify_share(&b.share, &db)
    }

    fn acceptable(&self, digest: &Digest) -> bool {
        let Some(entry) = self.blocks.get(digest) else {
            return false;
        };
        let b = &entry.block;
        if self.mode != Mode::Normal || b.view != self.view {
            return false;
        }
        let prior = self.voted.get(&(b.view, b.serial));
        let prior = prior.filter(|d| !self.vote_once_disabled() || *d == digest);
        if prior.is_some() {
            return false;
        }
        if b.serial <= self.lw || b.serial > self.lw + self.params.k {
            return false;
        }
        if b.content.len() > self.params.tau || (b.dummy && !b.content.is_empty()) {
            return false;
        }
        match self.expected.get(&b.serial) {
            Some(exp) if !exp.same_decision(b) => return false,
            None if b.dummy => return false,
            _ => {}
        }
        if let Some(logged) = self.log.block(b.serial) {
            if !logged.same_decision(b) {
                return false;
            }
        }
        true
    }

    /// Casts the first-round vote once all linked datablocks are held.
    pub(super) fn try_vote(&mut self, digest: Digest) {
        if !self.acceptable(&digest) {
            self.pending_votes.remove(&digest);
            return;
        }
        let entry = &self.blocks[&digest];
        let (view, serial) = (entry.block.view, entry.block.serial);
        let missing = self.missing_of(&digest);
        if !missing.is_empty() {
            self.pending_votes.insert(digest);
            self.start_retrieval(digest, missing);
            return;
        }
        self.pending_votes.remove(&digest);
        self.voted.insert((view, serial), digest);
        self.note(Note::Voted { view, serial, digest });
        let share = self.keys.sign_share(self.id, &digest);
        self.send_to_leader(Message::PrepareShare(share));
    }

    pub(super) fn missing_of(&self, block: &Digest) -> Vec<Digest> {
        match self.blocks.get(block) {
            Some(e) if !e.block.dummy => e
                .block
                .content
                .iter()
                .filter(|d| !self.pool.contains_key(*d))
                .copied()
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Called when a datablock lands in the pool.
    pub(super) fn datablock_arrived(&mut self, digest: Digest) {
        let Some(blocks) = self.waiting_on.remove(&digest) else {
            return;
        };
        for b in blocks {
            if !self.missing_of(&b).is_empty() {
                continue;
            }
            if self.retrieval_armed.remove(&b) {
                self.cancel_timer(TimerId::Retrieval(b));
            }
            if self.pending_votes.contains(&b) {
                self.try_vote(b);
            }
            if self.awaiting_exec.contains(&b) {
                self.try_log(b);
            }
        }
    }

    fn collect(&mut self, round: Round, from: ReplicaId, share: VoteShare) -> Option<AggregateProof> {
        let digest = share.message_digest;
        if share.signer != from || self.combined.contains(&digest) {
            return None;
        }
        if !self.keys.verify_share(&share, &digest) {
            return None;
        }
        let quorum = self.quorum();
        let map = match round {
            Round::Prepare => &mut self.prepare_shares,
            Round::Commit => &mut self.commit_shares,
        };
        let shares = map.entry(digest).or_default();
        shares.insert(from, share);
        if shares.len() < quorum {
            return None;
        }
        let proof = self.keys.combine(shares.values()).ok()?;
        map.remove(&digest);
        self.combined.insert(digest);
        Some(proof)
    }

    pub(super) fn on_prepare_share(&mut self, from: ReplicaId, share: VoteShare) {
        if !self.is_leader() {
            return;
        }
        match self.blocks.get(&share.message_digest) {
            Some(e) if e.block.view == self.view => {}
            _ => return,
        }
        if let Some(proof) = self.collect(Round::Prepare, from, share) {
            self.broadcast(Message::Notarization(proof));
            self.on_notarization(proof);
        }
    }

    pub(super) fn on_notarization(&mut self, proof: AggregateProof) {
        let digest = proof.message_digest;
        if !self.keys.verify_combined(&proof, &digest) {
            return;
        }
        let Some(entry) = self.blocks.get_mut(&digest) else {
            if self.cached_notarizations.insert(digest, proof).is_none() {
                self.unknown_blocks.insert(digest);
                self.arm_block_fetch();
            }
            return;
        };
        let mut fresh = None;
        if entry.notarization.is_none() {
            entry.notarization = Some(proof);
            entry.state = entry.state.max(BlockState::Notarized);
            fresh = Some(entry.block.clone());
        }
        let nd = notarization_digest(entry.notarization.as_ref().unwrap());
        let send_commit = !entry.commit_sent && self.mode == Mode::Normal && entry.block.view == self.view;
        if send_commit {
            entry.commit_sent = true;
        }
        if let Some(block) = fresh {
            self.note(Note::Notarized { block });
        }
        self.notar_index.insert(nd, digest);
        if send_commit {
            let share = self.keys.sign_share(self.id, &nd);
            self.send_to_leader(Message::CommitShare(share));
        }
        if let Some(conf) = self.cached_confirmations.remove(&nd) {
            self.on_confirmation(conf);
        }
    }

    pub(super) fn on_commit_share(&mut self, from: ReplicaId, share: VoteShare) {
        if !self.is_leader() {
            return;
        }
        match self
            .notar_index
            .get(&share.message_digest)
            .and_then(|d| self.blocks.get(d))
        {
            Some(e) if e.block.view == self.view => {}
            _ => return,
        }
        if let Some(proof) = self.collect(Round::Commit, from, share) {
            self.broadcast(Message::Confirmation(proof));
            self.on_confirmation(proof);
        }
    }

    pub(super) fn on_confirmation(&mut self, proof: AggregateProof) {
        let nd = proof.message_digest;
        if !self.keys.verify_combined(&proof, &nd) {
            return;
        }
        let Some(&digest) = self.notar_index.get(&nd) else {
            self.cached_confirmations.insert(nd, proof);
            return;
        };
        let entry = self.blocks.get_mut(&digest).expect("indexed block");
        if entry.confirmation.is_some() {
            return;
        }
        entry.confirmation = Some(proof);
        entry.state = BlockState::Confirmed;
        let serial = entry.block.serial;
        self.open_instances.remove(&serial);
        self.try_log(digest);
    }

    /// Appends a confirmed block to the log once its datablocks are held.
    pub(super) fn try_log(&mut self, digest: Digest) {
        let entry = &self.blocks[&digest];
        let block = entry.block.clone();
        let (Some(notarization), Some(confirmation)) = (entry.notarization, entry.confirmation) else {
            return;
        };
        if block.serial <= self.executed {
            self.awaiting_exec.remove(&digest);
            if let Some(logged) = self.log.block(block.serial) {
                if !logged.same_decision(&block) {
                    self.note(Note::LogConflict { serial: block.serial });
                }
            }
            return;
        }
        let missing = self.missing_of(&digest);
        if !missing.is_empty() {
            self.awaiting_exec.insert(digest);
            self.start_retrieval(digest, missing);
            return;
        }
        self.awaiting_exec.remove(&digest);
        match self.log.append(block.clone(), confirmation) {
            Ok(true) => {
                self.log_linked.extend(block.content.iter().copied());
                for d in &block.content {
                    self.ready.remove(d);
                }
                self.note(Note::Confirmed {
                    block,
                    notarization,
                    confirmation,
                });
                self.execute();
            }
            Ok(false) => {}
            Err(_) => self.note(Note::LogConflict { serial: block.serial }),
        }
    }

    fn execute(&mut self) {
        let start = self.executed;
        let mut acks: BTreeMap<u64, Vec<RequestId>> = BTreeMap::new();
        while self.executed < self.log.executed_upto() {
            let serial = self.executed + 1;
            let block = self.log.block(serial).expect("prefix entry").clone();
            let pool = &self.pool;
            let mut ids = block_request_ids(&block, &|d: &Digest| pool.get(d).map(|a| a.as_ref()))
                .expect("logged blocks have their datablocks");
            ids.retain(|id| self.executed_ids.insert(*id));
            let mut id_bytes = Vec::with_capacity(ids.len() * 16);
            for id in &ids {
                id_bytes.extend_from_slice(&id.to_bytes());
                self.mempool_ids.remove(id);
                if let Some(client) = self.client_origin.remove(id) {
                    acks.entry(client).or_default().push(*id);
                }
                if self.tagged_pending.remove(id) {
                    self.cancel_timer(TimerId::RequestTimeout(*id));
                }
            }
            self.state_hash = hash_parts(&[&self.state_hash.0, &serial.to_be_bytes(), &id_bytes]);
            self.executed = serial;
            self.note(Note::Executed { serial, ids });
            if serial.is_multiple_of(self.params.checkpoint_period()) {
                self.checkpoint_states.insert(serial, self.state_hash);
                self.send_checkpoint_share(serial);
            }
        }
        if self.executed == start {
            return;
        }
        if !self.mempool.is_empty() {
            let executed = &self.executed_ids;
            self.mempool.retain(|r| !executed.contains(&r.id));
        }
        self.failed_views = 0;
        self.push(OutputAction::ConfirmPrefix { upto: self.executed });
        for (client, ids) in acks {
            self.push(OutputAction::AckClient { client, ids });
        }
        self.try_propose(false);
    }

    // Fetching blocks known only through their proofs.

    fn arm_block_fetch(&mut self) {
        if !self.fetch_armed {
            self.fetch_armed = true;
            let after = self.ms(self.params.retrieval_timer_ms);
            self.set_timer(TimerId::BlockFetch, after);
        }
    }

    pub(super) fn on_block_fetch_timer(&mut self) {
        self.fetch_armed = false;
        let unknown: Vec<Digest> = self
            .unknown_blocks
            .iter()
            .filter(|d| !self.blocks.contains_key(*d))
            .copied()
            .collect();
        self.unknown_blocks = unknown.iter().copied().collect();
        if unknown.is_empty() {
            return;
        }
        self.broadcast(Message::BlockQuery {
            digests: unknown,
            sender: self.id,
        });
        self.arm_block_fetch();
    }

    pub(super) fn on_block_query(&mut self, from: ReplicaId, digests: &[Digest]) {
        for d in digests {
            let Some(e) = self.blocks.get(d) else { continue };
            if !self.answered_block_queries.insert((from, *d)) {
                continue;
            }
            let p = SignedProposal {
                block: e.block.clone(),
                share: e.leader_share,
            };
            self.send(from, Message::BlockResponse(p));
        }
    }

    /// Signed `⟨timeout, v⟩` for this replica.
    pub(super) fn timeout_msg(&self, view: u64, evidence: Option<Box<(SignedProposal, SignedProposal)>>) -> TimeoutMsg {
        let mut t = TimeoutMsg {
            view,
            sender: self.id,
            evidence,
            signature: crate::crypto::Signature {
                signer: self.id,
                sig: crate::crypto::threshold::SigBytes([0; 48]),
            },
        };
        t.signature = self.keys.sign(self.id, &t.signing_digest());
        t
    }
}

#[derive(Clone, Copy)]
enum Round {
    Prepare,
    Commit,
}
