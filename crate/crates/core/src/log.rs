//! The confirmed log and its execution order.

use std::collections::BTreeMap;

use crate::crypto::{AggregateProof, Digest};
use crate::error::LogError;
use crate::types::{BftBlock, Datablock, Request, RequestId};

#[derive(Clone, Debug, Default)]
pub struct Log {
    entries: BTreeMap<u64, (BftBlock, AggregateProof)>,
    executed_upto: u64,
}

impl Log {
    pub fn new() -> Self {
        Self::default()
    }

    /// Largest `s` such that serials `1..=s` are all present.
    pub fn executed_upto(&self) -> u64 {
        self.executed_upto
    }

    pub fn get(&self, serial: u64) -> Option<&(BftBlock, AggregateProof)> {
        self.entries.get(&serial)
    }

    pub fn block(&self, serial: u64) -> Option<&BftBlock> {
        self.entries.get(&serial).map(|(b, _)| b)
    }

    pub fn contains(&self, serial: u64) -> bool {
        self.entries.contains_key(&serial)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (u64, &BftBlock)> {
        self.entries.iter().map(|(s, (b, _))| (*s, b))
    }

    pub fn highest_serial(&self) -> u64 {
        self.entries.keys().next_back().copied().unwrap_or(0)
    }

    /// Inserts a confirmed block. Returns `Ok(true)` if the entry is new and
    /// `Ok(false)` if the same decision was already logged (a re-proposal of
    /// the same content in a later view counts as the same decision).
    pub fn append(&mut self, block: BftBlock, proof: AggregateProof) -> Result<bool, LogError> {
        if let Some((existing, _)) = self.entries.get(&block.serial) {
            if existing.same_decision(&block) {
                return Ok(false);
            }
            return Err(LogError::ConflictingEntry { serial: block.serial });
        }
        self.entries.insert(block.serial, (block, proof));
        while self.entries.contains_key(&(self.executed_upto + 1)) {
            self.executed_upto += 1;
        }
        Ok(true)
    }

    /// All requests of serials `1..=upto` in execution order.
    pub fn ordered_requests<'a, F>(&'a self, upto: u64, resolve: F) -> Result<Vec<Request>, LogError>
    where
        F: Fn(&Digest) -> Option<&'a Datablock>,
    {
        if upto > self.executed_upto {
            return Err(LogError::BeyondExecuted {
                upto,
                executed: self.executed_upto,
            });
        }
        let mut out = Vec::new();
        for (_, (block, _)) in self.entries.range(1..=upto) {
            out.extend(block_requests(block, &resolve)?);
        }
        Ok(out)
    }
}

/// Free-function form of [`Log::append`].
pub fn log_append(log: &mut Log, block: BftBlock, proof: AggregateProof) -> Result<bool, LogError> {
    log.append(block, proof)
}

/// Requests of one block sorted by canonical id bytes. Dummy blocks are empty.
pub fn block_requests<'a, F>(block: &BftBlock, resolve: &F) -> Result<Vec<Request>, LogError>
where
    F: Fn(&Digest) -> Option<&'a Datablock>,
{
    if block.dummy {
        return Ok(Vec::new());
    }
    let mut reqs = Vec::new();
    for d in &block.content {
        let db = resolve(d).ok_or(LogError::UnresolvedDatablock(*d))?;
        reqs.extend(db.requests.iter().cloned());
    }
    // Derived ordering on (client, seq) matches the canonical byte order.
    reqs.sort_by_key(|r| r.id);
    Ok(reqs)
}

/// Ids of [`block_requests`], in the same order.
pub fn block_request_ids<'a, F>(block: &BftBlock, resolve: &F) -> Result<Vec<RequestId>, LogError>
where
    F: Fn(&Digest) -> Option<&'a Datablock>,
{
    if block.dummy {
        return Ok(Vec::new());
    }
    let mut ids = Vec::new();
    for d in &block.content {
        let db = resolve(d).ok_or(LogError::UnresolvedDatablock(*d))?;
        ids.extend(db.requests.iter().map(|r| r.id));
    }
    ids.sort_unstable();
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::hash::hash;
    use crate::crypto::threshold::SigBytes;
    use crate::types::{ReplicaId, RequestId};
    use bytes::Bytes;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn proof() -> AggregateProof {
        AggregateProof {
            message_digest: hash(b"p"),
            proof: SigBytes([0; 48]),
        }
    }

    fn blk(serial: u64) -> BftBlock {
        BftBlock::new(1, serial, vec![hash(&serial.to_be_bytes())])
    }

    fn req(client: u64, seq: u64) -> Request {
        Request::new(RequestId { client, seq }, Bytes::from_static(b"x"))
    }

    #[test]
    fn first_append_executes() {
        let mut log = Log::new();
        assert!(log.append(blk(1), proof()).unwrap());
        assert_eq!(log.executed_upto(), 1);
    }

    #[test]
    fn gap_blocks_execution() {
        let mut log = Log::new();
        for s in [1, 2, 4] {
            log.append(blk(s), proof()).unwrap();
        }
        assert_eq!(log.executed_upto(), 2);
        log.append(blk(3), proof()).unwrap();
        assert_eq!(log.executed_upto(), 4);
    }

    fn permutations(items: &[u64]) -> Vec<Vec<u64>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for i in 0..items.len() {
            let mut rest = items.to_vec();
            let x = rest.remove(i);
            for mut p in permutations(&rest) {
                p.insert(0, x);
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn prefix_matches_oracle_over_all_orders() {
        let perms = permutations(&[1, 2, 3, 4]);
        assert_eq!(perms.len(), 24);
        for order in perms {
            let mut log = Log::new();
            let mut seen = Vec::new();
            let mut last = 0;
            for s in order {
                log.append(blk(s), proof()).unwrap();
                seen.push(s);
                let oracle = (1..=4).take_while(|x| seen.contains(x)).count() as u64;
                assert_eq!(log.executed_upto(), oracle);
                assert!(log.executed_upto() >= last);
                last = log.executed_upto();
            }
        }
    }

    #[test]
    fn conflicting_entry_rejected_same_decision_accepted() {
        let mut log = Log::new();
        log.append(blk(1), proof()).unwrap();
        let mut again = blk(1);
        again.view = 7;
        assert!(!log.append(again, proof()).unwrap());
        let other = BftBlock::new(1, 1, vec![hash(b"other")]);
        assert_eq!(
            log.append(other, proof()),
            Err(LogError::ConflictingEntry { serial: 1 })
        );
        assert_eq!(
            log.append(BftBlock::dummy(2, 1), proof()),
            Err(LogError::ConflictingEntry { serial: 1 })
        );
    }

    #[test]
    fn requests_sorted_within_block() {
        let db = Datablock::new(ReplicaId(1), 1, vec![req(2, 0), req(1, 5)]);
        let mut log = Log::new();
        log.append(BftBlock::new(1, 1, vec![db.digest()]), proof()).unwrap();
        let out = log.ordered_requests(1, |d| (*d == db.digest()).then_some(&db)).unwrap();
        let ids: Vec<_> = out.iter().map(|r| r.id).collect();
        assert_eq!(
            ids,
            vec![RequestId { client: 1, seq: 5 }, RequestId { client: 2, seq: 0 }]
        );
    }

    #[test]
    fn serial_order_across_blocks() {
        let a = Datablock::new(ReplicaId(1), 1, vec![req(9, 9)]);
        let b = Datablock::new(ReplicaId(2), 1, vec![req(0, 0)]);
        let pool: HashMap<Digest, Datablock> = [(a.digest(), a.clone()), (b.digest(), b.clone())].into_iter().collect();
        let mut log = Log::new();
        log.append(BftBlock::new(1, 2, vec![b.digest()]), proof()).unwrap();
        log.append(BftBlock::new(1, 1, vec![a.digest()]), proof()).unwrap();
        let out = log.ordered_requests(2, |d| pool.get(d)).unwrap();
        assert_eq!(out[0].id.client, 9);
        assert_eq!(out[1].id.client, 0);
    }

    #[test]
    fn unresolved_and_beyond_executed() {
        let mut log = Log::new();
        log.append(blk(1), proof()).unwrap();
        assert!(matches!(
            log.ordered_requests(1, |_| None),
            Err(LogError::UnresolvedDatablock(_))
        ));
        assert!(matches!(
            log.ordered_requests(2, |_| None),
            Err(LogError::BeyondExecuted { upto: 2, executed: 1 })
        ));
        let mut dummies = Log::new();
        dummies.append(BftBlock::dummy(1, 1), proof()).unwrap();
        assert_eq!(dummies.ordered_requests(1, |_| None).unwrap(), vec![]);
    }

    proptest! {
        #[test]
        fn ordered_requests_matches_bruteforce(
            blocks in proptest::collection::vec(
                proptest::collection::vec(
                    proptest::collection::vec((0u64..50, 0u64..50), 1..5),
                    0..4,
                ),
                1..8,
            ),
            dummy_mask in any::<u8>(),
        ) {
            let mut pool: HashMap<Digest, Datablock> = HashMap::new();
            let mut log = Log::new();
            let mut counter = 0;
            let mut expected: Vec<RequestId> = Vec::new();
            for (i, dbs) in blocks.iter().enumerate() {
                let serial = i as u64 + 1;
                if dummy_mask & (1 << (i % 8)) != 0 {
                    log.append(BftBlock::dummy(1, serial), proof()).unwrap();
                    continue;
                }
                let mut content = Vec::new();
                let mut ids = Vec::new();
                for reqs in dbs {
                    counter += 1;
                    let db = Datablock::new(ReplicaId(1), counter, reqs.iter().map(|&(c, s)| req(c, s)).collect());
                    ids.extend(reqs.iter().map(|&(c, s)| RequestId { client: c, seq: s }));
                    content.push(db.digest());
                    pool.insert(db.digest(), db);
                }
                // Oracle: numeric (client, seq) ordering equals big-endian byte ordering.
                ids.sort();
                expected.extend(ids);
                log.append(BftBlock::new(1, serial, content), proof()).unwrap();
            }
            let got: Vec<RequestId> = log
                .ordered_requests(log.executed_upto(), |d| pool.get(d))
                .unwrap()
                .iter()
                .map(|r| r.id)
                .collect();
            prop_assert_eq!(&got, &expected);
            let by_id: Vec<RequestId> = log
                .entries()
                .map(|(_, b)| block_request_ids(b, &|d: &Digest| pool.get(d)).unwrap())
                .collect::<Vec<_>>()
                .concat();
            prop_assert_eq!(by_id, expected);
        }
    }
}
