//! Cost of recovering one missing datablock, measured on real replicas.
//!
//! A generator disseminates one full datablock to everyone but the querier;
//! the querier then sees a block linking it, queries, and rebuilds it from
//! the responses, which arrive in replica order.

use std::sync::Arc;

use bytes::Bytes;
use serde::Serialize;

use crate::crypto::ThresholdKeySet;
use crate::error::ConfigError;
use crate::message::{Message, SignedProposal};
use crate::params::ProtocolParams;
use crate::replica::{leader_of, Dest, InputEvent, OutputAction, Replica, TimerId, INITIAL_VIEW};
use crate::types::{BftBlock, Datablock, ReplicaId, Request, RequestId};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeResult {
    pub n: usize,
    pub f: usize,
    pub datablock_bytes: usize,
    /// The querier's broadcast query, all copies.
    pub query_bytes: usize,
    /// Responses the querier consumed before the datablock was rebuilt.
    pub responses_used: usize,
    /// Bytes of those responses.
    pub received_bytes: usize,
    /// Bytes of responses arriving after the rebuild.
    pub late_bytes: usize,
    /// Largest response any single replica sent.
    pub per_responder_bytes: usize,
}

fn sends(actions: Vec<OutputAction>) -> Vec<(Dest, Message)> {
    actions
        .into_iter()
        .filter_map(|a| match a {
            OutputAction::Send { to, msg } => Some((to, msg)),
            _ => None,
        })
        .collect()
}

pub fn retrieval_probe(n: usize, batch: usize, payload: usize, seed: u64) -> Result<ProbeResult, ConfigError> {
    let f = (n.saturating_sub(1)) / 3;
    let params = ProtocolParams {
        n,
        f,
        datablock_batch: batch,
        payload,
        ..ProtocolParams::default()
    };
    params.validate()?;
    let keys =
        Arc::new(ThresholdKeySet::generate(n, f, seed).map_err(|e| ConfigError::invalid("params", e.to_string()))?);
    let leader = leader_of(INITIAL_VIEW, n);
    let querier = ReplicaId(n as u32 - 1);
    let generator = ReplicaId(if leader.0 == 0 { 2 } else { 0 });
    let mut replicas: Vec<Replica> = (0..n as u32)
        .map(|i| Replica::new(ReplicaId(i), params.clone(), keys.clone()))
        .collect();

    let body = Bytes::from(vec![0xA5u8; payload]);
    let mut datablock: Option<Arc<Datablock>> = None;
    for seq in 0..batch as u64 {
        let req = Request::new(RequestId { client: 0, seq }, body.clone());
        let out = replicas[generator.index()].handle(0, InputEvent::ClientRequest(req));
        for (_, msg) in sends(out) {
            if let Message::Datablock(db) = msg {
                datablock.get_or_insert(db);
            }
        }
    }
    let db = datablock.ok_or_else(|| ConfigError::invalid("batch", "no datablock was emitted"))?;
    let datablock_msg = Message::Datablock(db.clone());
    for r in replicas.iter_mut() {
        if r.id() != generator && r.id() != querier {
            r.handle(
                1,
                InputEvent::Deliver {
                    from: generator,
                    msg: datablock_msg.clone(),
                },
            );
        }
    }

    let block = BftBlock::new(INITIAL_VIEW, 1, vec![db.digest()]);
    let share = keys.sign_share(leader, &block.digest());
    let q = &mut replicas[querier.index()];
    q.handle(
        2,
        InputEvent::Deliver {
            from: leader,
            msg: Message::Proposal(SignedProposal {
                block: block.clone(),
                share,
            }),
        },
    );
    let query = sends(q.handle(3, InputEvent::TimerFired(TimerId::Retrieval(block.digest()))))
        .into_iter()
        .find(|(_, m)| matches!(m, Message::Query { .. }))
        .map(|(_, m)| m)
        .ok_or_else(|| ConfigError::invalid("probe", "querier did not query"))?;

    let mut result = ProbeResult {
        n,
        f,
        datablock_bytes: datablock_msg.wire_size(),
        query_bytes: query.wire_size() * (n - 1),
        responses_used: 0,
        received_bytes: 0,
        late_bytes: 0,
        per_responder_bytes: 0,
    };
    let mut responses = Vec::new();
    for r in replicas.iter_mut().filter(|r| r.id() != querier) {
        let from = r.id();
        for (_, msg) in sends(r.handle(
            4,
            InputEvent::Deliver {
                from: querier,
                msg: query.clone(),
            },
        )) {
            if matches!(msg, Message::Response { .. }) {
                result.per_responder_bytes = result.per_responder_bytes.max(msg.wire_size());
                responses.push((from, msg));
            }
        }
    }
    let q = &mut replicas[querier.index()];
    for (from, msg) in responses {
        let bytes = msg.wire_size();
        if q.holds(&db.digest()) {
            result.late_bytes += bytes;
            continue;
        }
        q.handle(5, InputEvent::Deliver { from, msg });
        result.responses_used += 1;
        result.received_bytes += bytes;
    }
    if !q.holds(&db.digest()) {
        return Err(ConfigError::invalid("probe", "datablock was not rebuilt"));
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_probe_uses_f_plus_one_responses() {
        let r = retrieval_probe(4, 50, 128, 1).unwrap();
        assert_eq!(r.responses_used, 2);
        // Two half-size chunks carry the whole datablock plus proofs.
        assert!(r.received_bytes > r.datablock_bytes);
        assert!(r.received_bytes < r.datablock_bytes + 400);
        assert!(r.late_bytes > 0);
    }
}
