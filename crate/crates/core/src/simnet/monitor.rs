//! Online safety checks over honest replicas' outputs.

use rustc_hash::{FxHashMap as HashMap, FxHashSet as HashSet};
use std::sync::Arc;

use thiserror::Error;

use super::trace::Trace;
use crate::crypto::ThresholdKeySet;
use crate::message::notarization_digest;
use crate::replica::{Note, OutputAction};
use crate::types::{BftBlock, ReplicaId};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("replicas {first} and {second} confirmed different blocks at serial {serial}")]
    ConflictingConfirmation {
        serial: u64,
        first: ReplicaId,
        second: ReplicaId,
    },
    #[error("replica {replica} voted twice in view {view} at serial {serial}")]
    DoubleVote { replica: ReplicaId, view: u64, serial: u64 },
    #[error("replica {replica} confirmed serial {serial} without valid proofs")]
    InvalidProof { replica: ReplicaId, serial: u64 },
    #[error("replica {replica} found a conflicting log entry at serial {serial}")]
    LogConflict { replica: ReplicaId, serial: u64 },
}

pub struct SafetyMonitor {
    keys: Arc<ThresholdKeySet>,
    honest: Vec<bool>,
    decided: HashMap<u64, (BftBlock, ReplicaId)>,
    votes: HashSet<(ReplicaId, u64, u64)>,
}

impl SafetyMonitor {
    pub fn new(keys: Arc<ThresholdKeySet>, honest: Vec<bool>) -> Self {
        SafetyMonitor {
            keys,
            honest,
            decided: HashMap::default(),
            votes: HashSet::default(),
        }
    }

    /// Checks the outputs of one event at `replica`. Faulty replicas are
    /// ignored.
    pub fn observe(&mut self, replica: ReplicaId, actions: &[OutputAction]) -> Result<(), Violation> {
        if !self.honest.get(replica.index()).copied().unwrap_or(false) {
            return Ok(());
        }
        for a in actions {
            let OutputAction::Note(note) = a else { continue };
            match note {
                Note::Voted { view, serial, .. } => {
                    if !self.votes.insert((replica, *view, *serial)) {
                        return Err(Violation::DoubleVote {
                            replica,
                            view: *view,
                            serial: *serial,
                        });
                    }
                }
                Note::Confirmed {
                    block,
                    notarization,
                    confirmation,
                } => {
                    let d = block.digest();
                    let nd = notarization_digest(notarization);
                    let valid = notarization.message_digest == d
                        && self.keys.verify_combined(notarization, &d)
                        && confirmation.message_digest == nd
                        && self.keys.verify_combined(confirmation, &nd);
                    if !valid {
                        return Err(Violation::InvalidProof {
                            replica,
                            serial: block.serial,
                        });
                    }
                    match self.decided.get(&block.serial) {
                        Some((b, first)) if !b.same_decision(block) => {
                            return Err(Violation::ConflictingConfirmation {
                                serial: block.serial,
                                first: *first,
                                second: replica,
                            });
                        }
                        Some(_) => {}
                        None => {
                            self.decided.insert(block.serial, (block.clone(), replica));
                        }
                    }
                }
                Note::LogConflict { serial } => {
                    return Err(Violation::LogConflict {
                        replica,
                        serial: *serial,
                    });
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Replays a captured trace through a fresh monitor.
pub fn monitor_safety(trace: &Trace, keys: Arc<ThresholdKeySet>, honest: Vec<bool>) -> Result<(), Violation> {
    let mut m = SafetyMonitor::new(keys, honest);
    for r in &trace.records {
        m.observe(r.replica, &r.actions)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{hash, AggregateProof};
    use crate::replica::TimerId;
    use crate::simnet::trace::{EventRecord, TraceRecord};

    fn keys() -> Arc<ThresholdKeySet> {
        Arc::new(ThresholdKeySet::generate(4, 1, 3).unwrap())
    }

    fn certify(k: &ThresholdKeySet, block: &BftBlock) -> (AggregateProof, AggregateProof) {
        let d = block.digest();
        let n1 = k
            .combine(&(0..3).map(|i| k.sign_share(ReplicaId(i), &d)).collect::<Vec<_>>())
            .unwrap();
        let nd = notarization_digest(&n1);
        let n2 = k
            .combine(&(0..3).map(|i| k.sign_share(ReplicaId(i), &nd)).collect::<Vec<_>>())
            .unwrap();
        (n1, n2)
    }

    fn confirmed(k: &ThresholdKeySet, block: BftBlock) -> OutputAction {
        let (notarization, confirmation) = certify(k, &block);
        OutputAction::Note(Note::Confirmed {
            block,
            notarization,
            confirmation,
        })
    }

    fn record(replica: u32, actions: Vec<OutputAction>) -> TraceRecord {
        TraceRecord {
            time: 0,
            replica: ReplicaId(replica),
            event: EventRecord::Timer(TimerId::ProposeFlush),
            dropped: false,
            actions,
            sends: Vec::new(),
        }
    }

    #[test]
    fn agreeing_confirmations_pass() {
        let k = keys();
        let b = BftBlock::new(1, 1, vec![hash(b"x")]);
        // A re-proposal of the same content in a later view is the same decision.
        let again = BftBlock::new(2, 1, vec![hash(b"x")]);
        let trace = Trace {
            records: vec![record(0, vec![confirmed(&k, b)]), record(2, vec![confirmed(&k, again)])],
            ..Trace::default()
        };
        assert_eq!(monitor_safety(&trace, k, vec![true; 4]), Ok(()));
    }

    #[test]
    fn injected_conflicting_confirmation_is_caught() {
        let k = keys();
        let a = BftBlock::new(1, 1, vec![hash(b"x")]);
        let b = BftBlock::new(1, 1, vec![hash(b"y")]);
        let trace = Trace {
            records: vec![record(0, vec![confirmed(&k, a)]), record(3, vec![confirmed(&k, b)])],
            ..Trace::default()
        };
        assert_eq!(
            monitor_safety(&trace, k, vec![true; 4]),
            Err(Violation::ConflictingConfirmation {
                serial: 1,
                first: ReplicaId(0),
                second: ReplicaId(3)
            })
        );
    }

    #[test]
    fn faulty_replicas_are_not_judged() {
        let k = keys();
        let a = BftBlock::new(1, 1, vec![hash(b"x")]);
        let b = BftBlock::new(1, 1, vec![hash(b"y")]);
        let trace = Trace {
            records: vec![record(0, vec![confirmed(&k, a)]), record(3, vec![confirmed(&k, b)])],
            ..Trace::default()
        };
        assert_eq!(monitor_safety(&trace, k, vec![true, true, true, false]), Ok(()));
    }

    #[test]
    fn double_vote_is_caught() {
        let k = keys();
        let vote = |d| {
            OutputAction::Note(Note::Voted {
                view: 1,
                serial: 4,
                digest: hash(d),
            })
        };
        let trace = Trace {
            records: vec![record(2, vec![vote(b"a")]), record(2, vec![vote(b"b")])],
            ..Trace::default()
        };
        assert!(matches!(
            monitor_safety(&trace, k, vec![true; 4]),
            Err(Violation::DoubleVote { serial: 4, .. })
        ));
    }

    #[test]
    fn forged_proof_is_caught() {
        let k = keys();
        let block = BftBlock::new(1, 1, vec![]);
        let (notarization, mut confirmation) = certify(&k, &block);
        confirmation.proof.0[0] ^= 1;
        let trace = Trace {
            records: vec![record(
                1,
                vec![OutputAction::Note(Note::Confirmed {
                    block,
                    notarization,
                    confirmation,
                })],
            )],
            ..Trace::default()
        };
        assert!(matches!(
            monitor_safety(&trace, k, vec![true; 4]),
            Err(Violation::InvalidProof { .. })
        ));
    }

    #[test]
    fn log_conflict_is_a_violation() {
        let trace = Trace {
            records: vec![record(1, vec![OutputAction::Note(Note::LogConflict { serial: 9 })])],
            ..Trace::default()
        };
        assert!(monitor_safety(&trace, keys(), vec![true; 4]).is_err());
    }
}
