//! Deterministic request-to-replica assignment used by clients.

use super::leader_of;
use crate::crypto::hash;
use crate::types::{ReplicaId, RequestId};

/// Maps a request onto one of the `n - 1` non-leaders of `view`:
/// `H(id) mod (n-1)`, shifted past the leader's index.
pub fn assign_replica(id: &RequestId, n: usize, view: u64) -> ReplicaId {
    let h = hash(&id.to_bytes());
    let x = u64::from_be_bytes(h.0[..8].try_into().unwrap());
    let slot = (x % (n as u64 - 1)) as u32;
    let leader = leader_of(view, n);
    if slot >= leader.0 {
        ReplicaId(slot + 1)
    } else {
        ReplicaId(slot)
    }
}
