//! Leader replacement: timeouts, view-change collection and new-view installation.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{leader_of, Mode, Note, Replica, TimerId};
use crate::crypto::threshold::SigBytes;
use crate::crypto::{Digest, Signature};
use crate::message::{Message, NewViewMsg, SignedProposal, TimeoutMsg, ViewChangeMsg};
use crate::types::{BftBlock, BlockState, ReplicaId, Time};

const MAX_BACKOFF_SHIFT: u32 = 6;

fn unsigned(id: ReplicaId) -> Signature {
    Signature {
        signer: id,
        sig: SigBytes([0; 48]),
    }
}

impl Replica {
    /// Trigger and escalation timeout, doubling with each view that failed
    /// to make progress.
    pub(super) fn view_change_timeout(&self) -> Time {
        self.ms(self.params.view_change_timer_ms) << self.failed_views.min(MAX_BACKOFF_SHIFT)
    }

    pub(super) fn on_request_timeout(&mut self, rid: crate::types::RequestId) {
        if !self.tagged_pending.contains(&rid) || self.mode != Mode::Normal {
            return;
        }
        self.start_view_change(self.view + 1, None);
    }

    pub(super) fn on_view_change_timer(&mut self, target: u64) {
        if self.view >= target {
            return;
        }
        if let Mode::ViewChanging { target: t } = self.mode {
            if t > target {
                return;
            }
        }
        self.start_view_change(target + 1, None);
    }

    /// Stops agreement in the current view and asks to move to `target`.
    pub(super) fn start_view_change(&mut self, target: u64, evidence: Option<Box<(SignedProposal, SignedProposal)>>) {
        if target <= self.view {
            return;
        }
        if let Mode::ViewChanging { target: t } = self.mode {
            if t >= target {
                return;
            }
        }
        self.mode = Mode::ViewChanging { target };
        self.failed_views += 1;
        self.pending_votes.clear();
        self.note(Note::ViewChangeStarted { target });

        let t = self.timeout_msg(target - 1, evidence);
        self.timeouts.entry(target - 1).or_default().insert(self.id, t.clone());
        self.broadcast(Message::Timeout(t));

        let vc = self.view_change_msg(target);
        let after = self.view_change_timeout();
        self.set_timer(TimerId::ViewChange(target), after);
        self.send(leader_of(target, self.n()), Message::ViewChange(Arc::new(vc)));
    }

    fn view_change_msg(&self, target: u64) -> ViewChangeMsg {
        let mut best: BTreeMap<u64, (BftBlock, crate::crypto::AggregateProof)> = BTreeMap::new();
        for e in self.blocks.values() {
            if e.state < BlockState::Notarized || e.block.serial <= self.lw {
                continue;
            }
            let proof = e.notarization.expect("notarized blocks carry their proof");
            let replace = match best.get(&e.block.serial) {
                None => true,
                Some((b, _)) => e.block.view > b.view || (e.block.view == b.view && e.block.digest() < b.digest()),
            };
            if replace {
                best.insert(e.block.serial, (e.block.clone(), proof));
            }
        }
        let mut vc = ViewChangeMsg {
            new_view: target,
            sender: self.id,
            checkpoint: self.last_checkpoint,
            notarized: best.into_values().collect(),
            signature: unsigned(self.id),
        };
        vc.signature = self.keys.sign(self.id, &vc.signing_digest());
        vc
    }

    pub(super) fn on_timeout_msg(&mut self, from: ReplicaId, t: TimeoutMsg) {
        if t.sender != from
            || t.signature.signer != from
            || !self.keys.verify_signature(&t.signature, &t.signing_digest())
        {
            return;
        }
        if t.view < self.view {
            return;
        }
        let view = t.view;
        let evidence = t
            .evidence
            .as_ref()
            .filter(|ev| ev.0.block.view == view && self.valid_evidence(ev))
            .cloned();
        self.timeouts.entry(view).or_default().insert(from, t);
        if evidence.is_some() {
            self.start_view_change(view + 1, evidence);
            return;
        }
        if self.timeouts[&view].len() > self.f() {
            self.start_view_change(view + 1, None);
        }
    }

    fn valid_view_change(&self, vc: &ViewChangeMsg) -> bool {
        if vc.signature.signer != vc.sender || !self.keys.verify_signature(&vc.signature, &vc.signing_digest()) {
            return false;
        }
        if let Some(cert) = &vc.checkpoint {
            if !self.valid_checkpoint(cert) {
                return false;
            }
        }
        vc.notarized.iter().all(|(b, p)| {
            let d = b.digest();
            p.message_digest == d && self.keys.verify_combined(p, &d)
        })
    }

    pub(super) fn on_view_change(&mut self, from: ReplicaId, vc: Arc<ViewChangeMsg>) {
        let target = vc.new_view;
        if vc.sender != from
            || target <= self.view
            || leader_of(target, self.n()) != self.id
            || self.new_view_sent.contains(&target)
            || !self.valid_view_change(&vc)
        {
            return;
        }
        let quorum = self.quorum();
        let collected = self.view_changes.entry(target).or_default();
        collected.insert(from, vc);
        if collected.len() < quorum {
            return;
        }
        let view_changes: Vec<ViewChangeMsg> = collected.values().take(quorum).map(|v| v.as_ref().clone()).collect();
        self.new_view_sent.insert(target);
        let mut nv = NewViewMsg {
            view: target,
            sender: self.id,
            view_changes,
            signature: unsigned(self.id),
        };
        nv.signature = self.keys.sign(self.id, &nv.signing_digest());
        let nv = Arc::new(nv);
        self.broadcast(Message::NewView(nv.clone()));
        self.on_new_view(self.id, &nv);
    }

    pub(super) fn on_new_view(&mut self, from: ReplicaId, nv: &NewViewMsg) {
        if nv.view <= self.view
            || nv.sender != from
            || leader_of(nv.view, self.n()) != from
            || nv.signature.signer != from
            || !self.keys.verify_signature(&nv.signature, &nv.signing_digest())
        {
            return;
        }
        let mut senders: Vec<ReplicaId> = nv.view_changes.iter().map(|v| v.sender).collect();
        senders.sort();
        senders.dedup();
        if senders.len() != nv.view_changes.len() || senders.len() < self.quorum() {
            return;
        }
        if !nv
            .view_changes
            .iter()
            .all(|v| v.new_view == nv.view && self.valid_view_change(v))
        {
            return;
        }
        self.install(nv);
    }

    /// Re-proposals a new view must carry: for every serial above the
    /// highest checkpoint up to the highest notarized serial, the notarized
    /// block from the latest view, or a dummy block.
    pub fn reproposals(view: u64, lw: u64, view_changes: &[ViewChangeMsg]) -> BTreeMap<u64, BftBlock> {
        let mut chosen: BTreeMap<u64, &BftBlock> = BTreeMap::new();
        for vc in view_changes {
            for (b, _) in &vc.notarized {
                if b.serial <= lw {
                    continue;
                }
                let replace = match chosen.get(&b.serial) {
                    None => true,
                    Some(c) => b.view > c.view || (b.view == c.view && b.digest() < c.digest()),
                };
                if replace {
                    chosen.insert(b.serial, b);
                }
            }
        }
        let top = chosen.keys().next_back().copied().unwrap_or(lw);
        (lw + 1..=top)
            .map(|s| {
                let block = match chosen.get(&s) {
                    Some(b) => BftBlock {
                        view,
                        serial: s,
                        content: b.content.clone(),
                        dummy: b.dummy,
                    },
                    None => BftBlock::dummy(view, s),
                };
                (s, block)
            })
            .collect()
    }

    fn install(&mut self, nv: &NewViewMsg) {
        let best_cp = nv
            .view_changes
            .iter()
            .filter_map(|v| v.checkpoint)
            .max_by_key(|c| c.checkpoint.serial);
        if let Some(cert) = best_cp {
            if cert.checkpoint.serial > self.lw {
                self.adopt_checkpoint(cert);
            }
        }
        let was_leader = self.is_leader();
        self.view = nv.view;
        self.mode = Mode::Normal;
        self.expected = Self::reproposals(self.view, self.lw, &nv.view_changes);

        self.ready.clear();
        self.linkable.clear();
        self.linkable_set.clear();
        self.proposed_linked.clear();
        self.prepare_shares.clear();
        self.commit_shares.clear();
        self.open_instances.clear();
        self.pending_votes.clear();
        self.propose_armed = false;
        let view = self.view;
        self.timeouts.retain(|v, _| *v >= view);
        self.view_changes.retain(|v, _| *v > view);
        self.note(Note::ViewInstalled { view });

        let top = self.expected.keys().next_back().copied().unwrap_or(self.lw);
        self.next_serial = top.max(self.lw) + 1;
        if self.is_leader() {
            for b in self.expected.values() {
                self.proposed_linked.extend(b.content.iter().copied());
            }
            let blocks: Vec<BftBlock> = self.expected.values().cloned().collect();
            for b in blocks {
                self.propose(b);
            }
        } else {
            let expected_linked: std::collections::HashSet<Digest> =
                self.expected.values().flat_map(|b| b.content.iter().copied()).collect();
            let mut unlinked: Vec<Digest> = self
                .pool
                .keys()
                .filter(|d| !self.log_linked.contains(*d) && !expected_linked.contains(*d))
                .copied()
                .collect();
            unlinked.sort();
            for digest in unlinked {
                self.send_to_leader(Message::Ready {
                    digest,
                    sender: self.id,
                });
            }
            if was_leader {
                self.emit_datablocks(false);
            }
        }

        if let Some(&s) = self.checkpoint_states.keys().next_back() {
            self.send_checkpoint_share(s);
        }
        let after = self.view_change_timeout();
        let tagged: Vec<_> = self.tagged_pending.iter().copied().collect();
        for id in tagged {
            self.set_timer(TimerId::RequestTimeout(id), after);
        }

        let later = self.future_blocks.split_off(&(view + 1));
        let now = std::mem::replace(&mut self.future_blocks, later);
        if let Some(ds) = now.get(&view) {
            for d in ds.clone() {
                if self.blocks.contains_key(&d) {
                    self.try_vote(d);
                }
            }
        }
        // Notarizations that arrived before this view's blocks were votable.
        let notarized: Vec<Digest> = {
            let mut v: Vec<Digest> = self
                .blocks
                .iter()
                .filter(|(_, e)| e.block.view == view && e.notarization.is_some() && !e.commit_sent)
                .map(|(d, _)| *d)
                .collect();
            v.sort();
            v
        };
        for d in notarized {
            let proof = self.blocks[&d].notarization.unwrap();
            self.on_notarization(proof);
        }
        self.try_propose(false);
    }
}
