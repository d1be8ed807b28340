//! Compact set of request ids.
//!
//! Clients number their requests from zero, so each client gets a bitmap
//! over its sequence numbers. Fully set leading words are dropped, and
//! numbers far beyond the bitmap go to a sparse overflow set.

use std::collections::{BTreeSet, VecDeque};

use rustc_hash::FxHashMap;

use crate::types::RequestId;

/// Bitmap words a client may hold ahead of its first gap.
const MAX_WORDS: u64 = 1 << 14;

#[derive(Clone, Debug, Default)]
struct ClientIds {
    /// Index of the first word still kept; every seq below it is present.
    base: u64,
    words: VecDeque<u64>,
    far: BTreeSet<u64>,
}

impl ClientIds {
    fn set(&mut self, seq: u64) {
        let at = (seq / 64 - self.base) as usize;
        if at >= self.words.len() {
            self.words.resize(at + 1, 0);
        }
        self.words[at] |= 1u64 << (seq % 64);
    }

    /// Drops full leading words and pulls overflow entries now in range.
    fn compact(&mut self) {
        loop {
            while self.words.front() == Some(&u64::MAX) {
                self.words.pop_front();
                self.base += 1;
            }
            match self.far.first() {
                Some(&seq) if seq / 64 - self.base < MAX_WORDS => {
                    self.far.pop_first();
                    self.set(seq);
                }
                _ => return,
            }
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RequestIdSet {
    clients: FxHashMap<u64, ClientIds>,
    len: usize,
}

impl RequestIdSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `id`; false if it was already present.
    pub fn insert(&mut self, id: RequestId) -> bool {
        let c = self.clients.entry(id.client).or_default();
        let word = id.seq / 64;
        if word < c.base {
            return false;
        }
        if word - c.base >= MAX_WORDS {
            if !c.far.insert(id.seq) {
                return false;
            }
            self.len += 1;
            return true;
        }
        let at = (word - c.base) as usize;
        if c.words.get(at).is_some_and(|w| w & (1u64 << (id.seq % 64)) != 0) {
            return false;
        }
        c.set(id.seq);
        c.compact();
        self.len += 1;
        true
    }

    pub fn contains(&self, id: &RequestId) -> bool {
        let Some(c) = self.clients.get(&id.client) else {
            return false;
        };
        let word = id.seq / 64;
        if word < c.base {
            return true;
        }
        if word - c.base >= MAX_WORDS {
            return c.far.contains(&id.seq);
        }
        c.words
            .get((word - c.base) as usize)
            .is_some_and(|w| w & (1u64 << (id.seq % 64)) != 0)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    proptest! {
        #[test]
        fn behaves_like_a_hash_set(ops in prop::collection::vec((0u64..4, 0u64..200), 0..600)) {
            let mut set = RequestIdSet::new();
            let mut model = HashSet::new();
            for (client, seq) in ops {
                let id = RequestId { client, seq };
                prop_assert_eq!(set.insert(id), model.insert(id));
                prop_assert_eq!(set.len(), model.len());
            }
            for client in 0..4 {
                for seq in 0..202 {
                    let id = RequestId { client, seq };
                    prop_assert_eq!(set.contains(&id), model.contains(&id));
                }
            }
        }
    }

    #[test]
    fn far_ids_join_the_bitmap_as_the_floor_rises() {
        let mut set = RequestIdSet::new();
        let span = MAX_WORDS * 64;
        let far = RequestId {
            client: 1,
            seq: span + 5,
        };
        assert!(set.insert(far));
        assert_eq!(set.clients[&1].far.len(), 1);
        for seq in 0..128 {
            set.insert(RequestId { client: 1, seq });
        }
        let c = &set.clients[&1];
        assert!(c.far.is_empty());
        assert!(set.contains(&far));
        assert!(!set.insert(far));
        assert!(!set.contains(&RequestId {
            client: 1,
            seq: span + 6
        }));
        assert_eq!(set.len(), 129);
    }

    #[test]
    fn full_words_are_dropped() {
        let mut set = RequestIdSet::new();
        for seq in (0..1000).rev() {
            set.insert(RequestId { client: 7, seq });
        }
        let c = &set.clients[&7];
        assert_eq!((c.base, c.words.len()), (15, 1));
        assert!(!set.insert(RequestId { client: 7, seq: 3 }));
    }
}
