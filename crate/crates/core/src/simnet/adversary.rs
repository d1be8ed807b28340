//! Byzantine behaviour, applied only at the network edges of faulty replicas.
//!
//! Faulty replicas run the unmodified state machine; strategies rewrite what
//! they send and filter what they receive.

use std::collections::BTreeMap;

use rustc_hash::FxHashMap as HashMap;
use std::sync::Arc;

use super::{Scenario, Strategy};
use crate::crypto::hash::hash_parts;
use crate::crypto::{Digest, ThresholdKeySet, VoteShare};
use crate::message::{notarization_digest, Message, SignedProposal};
use crate::replica::{leader_of, Dest};
use crate::types::{BftBlock, Datablock, ReplicaId, Time};

/// Counters of flooded datablocks start here, far above any honest counter.
const FLOOD_BASE: u64 = u64::MAX / 2;

#[derive(Clone, Debug)]
pub(super) struct Outgoing {
    pub from: ReplicaId,
    pub to: ReplicaId,
    pub msg: Message,
}

/// Second-round bookkeeping for a conflicting block the equivocating leader
/// drives alongside its honest core.
struct Shadow {
    leader: ReplicaId,
    prepare: BTreeMap<ReplicaId, VoteShare>,
    notarization_digest: Option<Digest>,
    commit: BTreeMap<ReplicaId, VoteShare>,
    confirmed: bool,
}

pub(super) struct Adversary {
    n: usize,
    quorum: usize,
    keys: Arc<ThresholdKeySet>,
    strategies: Vec<Option<Strategy>>,
    selective_s: usize,
    flood_counter: u64,
    fake_counter: u64,
    shadows: HashMap<Digest, Shadow>,
    /// Notarization digest of a shadow block to the block's digest.
    shadow_commits: HashMap<Digest, Digest>,
}

impl Adversary {
    pub fn new(sc: &Scenario, keys: Arc<ThresholdKeySet>) -> Self {
        let n = sc.params.n;
        Adversary {
            n,
            quorum: sc.params.quorum(),
            keys,
            strategies: (0..n as u32).map(|i| sc.strategy_of(ReplicaId(i)).cloned()).collect(),
            selective_s: 2 * sc.params.f,
            flood_counter: 0,
            fake_counter: 0,
            shadows: HashMap::default(),
            shadow_commits: HashMap::default(),
        }
    }

    pub fn strategy(&self, r: ReplicaId) -> Option<&Strategy> {
        self.strategies[r.index()].as_ref()
    }

    pub fn is_faulty(&self, r: ReplicaId) -> bool {
        self.strategy(r).is_some()
    }

    fn faulty(&self) -> impl Iterator<Item = ReplicaId> + '_ {
        (0..self.n as u32).map(ReplicaId).filter(|r| self.is_faulty(*r))
    }

    /// Whether `r` has stopped processing events altogether.
    pub fn crashed(&self, r: ReplicaId, now: Time) -> bool {
        matches!(self.strategy(r), Some(Strategy::CrashAt { at_ms }) if now >= at_ms * crate::params::MS)
    }

    /// Whether `r` currently emits nothing at all, acks included.
    pub fn mute(&self, r: ReplicaId, now: Time) -> bool {
        self.crashed(r, now)
            || matches!(self.strategy(r), Some(Strategy::SilentLeader { from_ms }) if now >= from_ms * crate::params::MS)
    }

    /// Filters a message arriving at faulty `to`. Returns whether the state
    /// machine sees it, plus anything the adversary sends in reaction.
    pub fn inbound(&mut self, to: ReplicaId, now: Time, msg: &Message) -> (bool, Vec<Outgoing>) {
        if self.crashed(to, now) {
            return (false, Vec::new());
        }
        match (self.strategy(to), msg) {
            (Some(Strategy::SelectiveDissemination { .. }), Message::Datablock(db))
                if !self.is_faulty(db.generator) =>
            {
                (false, Vec::new())
            }
            (Some(Strategy::EquivocatingLeader), Message::PrepareShare(s)) => {
                let out = if self.mute(to, now) {
                    Vec::new()
                } else {
                    self.shadow_prepare(*s)
                };
                (true, out)
            }
            (Some(Strategy::EquivocatingLeader), Message::CommitShare(s)) => {
                let out = if self.mute(to, now) {
                    Vec::new()
                } else {
                    self.shadow_commit(*s)
                };
                (true, out)
            }
            _ => (true, Vec::new()),
        }
    }

    fn all_but(&self, r: ReplicaId) -> Vec<ReplicaId> {
        (0..self.n as u32).map(ReplicaId).filter(|x| *x != r).collect()
    }

    fn broadcast(&self, from: ReplicaId, msg: Message) -> Vec<Outgoing> {
        self.all_but(from)
            .into_iter()
            .map(|to| Outgoing {
                from,
                to,
                msg: msg.clone(),
            })
            .collect()
    }

    /// Rewrites the sends of faulty replica `r`, whose current leader is
    /// `leader`.
    pub fn outbound(
        &mut self,
        r: ReplicaId,
        now: Time,
        leader: ReplicaId,
        sends: Vec<(Dest, Message)>,
    ) -> Vec<Outgoing> {
        if self.mute(r, now) {
            return Vec::new();
        }
        let strategy = self.strategy(r).cloned();
        let mut out = Vec::new();
        for (dest, msg) in sends {
            let targets = match dest {
                Dest::To(t) => vec![t],
                Dest::Broadcast => self.all_but(r),
            };
            let own_datablock = matches!(&msg, Message::Datablock(db) if db.generator == r);
            match (&strategy, &msg) {
                (Some(Strategy::SelectiveDissemination { s }), Message::Datablock(db)) if own_datablock => {
                    let s = s.unwrap_or(self.selective_s);
                    for to in self.selective_recipients(r, leader, s) {
                        out.push(Outgoing {
                            from: r,
                            to,
                            msg: msg.clone(),
                        });
                    }
                    let digest = db.digest();
                    let colluders: Vec<ReplicaId> = self.faulty().filter(|c| *c != r && *c != leader).collect();
                    for c in colluders {
                        out.push(Outgoing {
                            from: c,
                            to: leader,
                            msg: Message::Ready { digest, sender: c },
                        });
                    }
                }
                (Some(Strategy::FloodDatablocks { multiplier }), Message::Datablock(db)) if own_datablock => {
                    for to in targets {
                        out.push(Outgoing {
                            from: r,
                            to,
                            msg: msg.clone(),
                        });
                    }
                    for _ in 1..*multiplier {
                        self.flood_counter += 1;
                        let copy = Arc::new(Datablock::new(r, FLOOD_BASE + self.flood_counter, db.requests.clone()));
                        out.extend(self.broadcast(r, Message::Datablock(copy)));
                    }
                }
                (Some(Strategy::FakeReadyWithholdData), Message::Datablock(_)) if own_datablock => {
                    if leader != r {
                        out.push(Outgoing {
                            from: r,
                            to: leader,
                            msg,
                        });
                    }
                }
                (Some(Strategy::FakeReadyWithholdData), Message::Ready { .. }) => {
                    self.fake_counter += 1;
                    let fake = Message::Ready {
                        digest: hash_parts(&[b"fake", &r.0.to_be_bytes(), &self.fake_counter.to_be_bytes()]),
                        sender: r,
                    };
                    for to in targets {
                        out.push(Outgoing {
                            from: r,
                            to,
                            msg: msg.clone(),
                        });
                        out.push(Outgoing {
                            from: r,
                            to,
                            msg: msg.clone(),
                        });
                        out.push(Outgoing {
                            from: r,
                            to,
                            msg: fake.clone(),
                        });
                    }
                }
                (Some(Strategy::FakeReadyWithholdData), Message::Response { .. }) => {}
                (Some(Strategy::EquivocatingLeader), Message::Proposal(p))
                    if leader_of(p.block.view, self.n) == r && !p.block.content.is_empty() =>
                {
                    out.extend(self.equivocate(r, p));
                }
                _ => {
                    for to in targets {
                        out.push(Outgoing {
                            from: r,
                            to,
                            msg: msg.clone(),
                        });
                    }
                }
            }
        }
        out
    }

    /// The leader plus the first `n - s - 1` honest non-leaders after `r`.
    fn selective_recipients(&self, r: ReplicaId, leader: ReplicaId, s: usize) -> Vec<ReplicaId> {
        let mut to = Vec::new();
        if leader != r {
            to.push(leader);
        }
        let honest: Vec<ReplicaId> = (1..self.n as u32)
            .map(|k| ReplicaId((r.0 + k) % self.n as u32))
            .filter(|x| *x != leader && !self.is_faulty(*x))
            .collect();
        to.extend(honest.into_iter().take(self.n.saturating_sub(s + 1)));
        to
    }

    /// Sends block `a` to one half of the others and a conflicting block to
    /// the other half; the first replica of the `a` half receives both.
    fn equivocate(&mut self, r: ReplicaId, p: &SignedProposal) -> Vec<Outgoing> {
        let a = &p.block;
        let content = if a.content.len() >= 2 {
            a.content.iter().rev().copied().collect()
        } else {
            Vec::new()
        };
        let b = BftBlock::new(a.view, a.serial, content);
        let bd = b.digest();
        let b_share = self.keys.sign_share(r, &bd);
        let mut prepare = BTreeMap::new();
        prepare.insert(r, b_share);
        self.shadows.insert(
            bd,
            Shadow {
                leader: r,
                prepare,
                notarization_digest: None,
                commit: BTreeMap::new(),
                confirmed: false,
            },
        );
        let others = self.all_but(r);
        let half = others.len().div_ceil(2);
        let pa = Message::Proposal(p.clone());
        let pb = Message::Proposal(SignedProposal {
            block: b,
            share: b_share,
        });
        let mut out = Vec::new();
        for (i, to) in others.iter().enumerate() {
            if i < half {
                out.push(Outgoing {
                    from: r,
                    to: *to,
                    msg: pa.clone(),
                });
            }
            if i >= half || i == 0 {
                out.push(Outgoing {
                    from: r,
                    to: *to,
                    msg: pb.clone(),
                });
            }
        }
        out
    }

    fn shadow_prepare(&mut self, s: VoteShare) -> Vec<Outgoing> {
        let d = s.message_digest;
        let quorum = self.quorum;
        let Some(sh) = self.shadows.get_mut(&d) else {
            return Vec::new();
        };
        if sh.notarization_digest.is_some() || !self.keys.verify_share(&s, &d) {
            return Vec::new();
        }
        sh.prepare.insert(s.signer, s);
        if sh.prepare.len() < quorum {
            return Vec::new();
        }
        let Ok(proof) = self.keys.combine(sh.prepare.values()) else {
            return Vec::new();
        };
        let nd = notarization_digest(&proof);
        let leader = sh.leader;
        sh.notarization_digest = Some(nd);
        sh.commit.insert(leader, self.keys.sign_share(leader, &nd));
        self.shadow_commits.insert(nd, d);
        self.broadcast(leader, Message::Notarization(proof))
    }

    fn shadow_commit(&mut self, s: VoteShare) -> Vec<Outgoing> {
        let nd = s.message_digest;
        let quorum = self.quorum;
        let Some(bd) = self.shadow_commits.get(&nd) else {
            return Vec::new();
        };
        let sh = self.shadows.get_mut(bd).expect("shadow for commit");
        if sh.confirmed || !self.keys.verify_share(&s, &nd) {
            return Vec::new();
        }
        sh.commit.insert(s.signer, s);
        if sh.commit.len() < quorum {
            return Vec::new();
        }
        let Ok(proof) = self.keys.combine(sh.commit.values()) else {
            return Vec::new();
        };
        sh.confirmed = true;
        let leader = sh.leader;
        self.broadcast(leader, Message::Confirmation(proof))
    }
}
