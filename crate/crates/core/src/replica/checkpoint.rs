//! Checkpoints, watermark advance and garbage collection.

use std::collections::HashSet;

use super::{Mode, Note, Replica};
use crate::crypto::{Digest, VoteShare};
use crate::message::{Checkpoint, CheckpointCert, Message};
use crate::types::ReplicaId;

impl Replica {
    pub(super) fn send_checkpoint_share(&mut self, serial: u64) {
        if self.mode != Mode::Normal || serial <= self.lw {
            return;
        }
        let Some(&state_hash) = self.checkpoint_states.get(&serial) else {
            return;
        };
        let checkpoint = Checkpoint { serial, state_hash };
        let share = self.keys.sign_share(self.id, &checkpoint.digest());
        self.send_to_leader(Message::CheckpointShare { checkpoint, share });
    }

    pub(super) fn on_checkpoint_share(&mut self, from: ReplicaId, cp: Checkpoint, share: VoteShare) {
        if !self.is_leader() || cp.serial <= self.lw || share.signer != from {
            return;
        }
        let digest = cp.digest();
        if share.message_digest != digest || !self.keys.verify_share(&share, &digest) {
            return;
        }
        let quorum = self.quorum();
        let shares = self.checkpoint_shares.entry((cp.serial, digest)).or_default();
        shares.insert(from, share);
        if shares.len() < quorum {
            return;
        }
        let Ok(proof) = self.keys.combine(shares.values()) else {
            return;
        };
        let cert = CheckpointCert { checkpoint: cp, proof };
        self.broadcast(Message::CheckpointProof(cert));
        self.on_checkpoint_proof(cert);
    }

    pub(super) fn valid_checkpoint(&self, cert: &CheckpointCert) -> bool {
        let digest = cert.checkpoint.digest();
        cert.proof.message_digest == digest && self.keys.verify_combined(&cert.proof, &digest)
    }

    pub(super) fn on_checkpoint_proof(&mut self, cert: CheckpointCert) {
        if cert.checkpoint.serial <= self.lw || !self.valid_checkpoint(&cert) {
            return;
        }
        self.adopt_checkpoint(cert);
        self.try_propose(false);
    }

    pub(super) fn adopt_checkpoint(&mut self, cert: CheckpointCert) {
        let previous = self.lw;
        self.lw = cert.checkpoint.serial;
        self.last_checkpoint = Some(cert);
        self.next_serial = self.next_serial.max(self.lw + 1);
        self.note(Note::StableCheckpoint { serial: self.lw });
        self.prune(previous);
        self.revisit_window(previous + self.params.k);
    }

    /// Retries votes on current-view blocks that arrived beyond the old
    /// window and now fall inside it.
    fn revisit_window(&mut self, old_top: u64) {
        let view = self.view;
        let mut entered: Vec<(u64, Digest)> = self
            .blocks
            .iter()
            .filter(|(_, e)| e.block.view == view && e.block.serial > old_top)
            .map(|(d, e)| (e.block.serial, *d))
            .collect();
        entered.sort_unstable();
        for (_, d) in entered {
            self.try_vote(d);
        }
    }

    /// Drops datablocks linked at serials up to `upto`, one checkpoint behind
    /// the stable one so that replicas still retrieving can be served, and
    /// forgets per-block state below the watermark.
    fn prune(&mut self, upto: u64) {
        let upto = upto.min(self.executed);
        if upto > self.pruned_upto {
            let mut dropped = Vec::new();
            for (_, block) in self.log.entries().filter(|(s, _)| *s > self.pruned_upto && *s <= upto) {
                dropped.extend(block.content.iter().copied());
            }
            for d in &dropped {
                self.pool.remove(d);
                self.own_chunks.remove(d);
            }
            let pool = &self.pool;
            self.answered_queries.retain(|(_, d)| pool.contains_key(d));
            self.pruned_upto = upto;
        }

        let bound = self.lw.min(self.executed);
        let mut gone = Vec::new();
        self.blocks.retain(|d, e| {
            let keep = e.block.serial > bound;
            if !keep {
                gone.push(*d);
            }
            keep
        });
        if !gone.is_empty() {
            let blocks = &self.blocks;
            self.notar_index.retain(|_, d| blocks.contains_key(d));
            let index = &self.notar_index;
            self.combined
                .retain(|d| blocks.contains_key(d) || index.contains_key(d));
            let gone: HashSet<Digest> = gone.into_iter().collect();
            self.pending_votes.retain(|d| !gone.contains(d));
            self.answered_block_queries.retain(|(_, b)| !gone.contains(b));
        }
        let lw = self.lw;
        self.slots.retain(|(_, s), _| *s > lw);
        self.voted.retain(|(_, s), _| *s > lw);
        self.checkpoint_states.retain(|s, _| *s >= lw);
        self.checkpoint_shares = self.checkpoint_shares.split_off(&(lw + 1, Digest([0; 32])));
        self.expected.retain(|s, _| *s > lw);
    }
}
