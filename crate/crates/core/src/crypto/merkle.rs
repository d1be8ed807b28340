//! Binary Merkle trees over byte-string leaves.
//!
//! Leaves hash as `H(0x00 || index || leaf)` and interior nodes as
//! `H(0x01 || left || right)`; an odd node at any level is paired with a copy
//! of itself. Binding the index into the leaf hash makes the duplicated tail
//! unambiguous.

use crate::crypto::hash::{hash_parts, Digest};

const LEAF: u8 = 0x00;
const NODE: u8 = 0x01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

/// Sibling hashes from leaf to root, each tagged with the side it sits on.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct MerkleProof {
    pub path: Vec<(Digest, Side)>,
}

pub fn leaf_hash(index: u32, leaf: &[u8]) -> Digest {
    hash_parts(&[&[LEAF], &index.to_be_bytes(), leaf])
}

fn node_hash(left: &Digest, right: &Digest) -> Digest {
    hash_parts(&[&[NODE], &left.0, &right.0])
}

/// Builds the tree and returns the root plus one proof per leaf.
///
/// Panics on an empty leaf list.
pub fn build<L: AsRef<[u8]>>(leaves: &[L]) -> (Digest, Vec<MerkleProof>) {
    assert!(!leaves.is_empty(), "merkle tree needs at least one leaf");
    let mut level: Vec<Digest> = leaves
        .iter()
        .enumerate()
        .map(|(i, l)| leaf_hash(i as u32, l.as_ref()))
        .collect();
    let mut proofs = vec![MerkleProof::default(); leaves.len()];
    // positions[i] = index of leaf i's ancestor within the current level.
    let mut positions: Vec<usize> = (0..leaves.len()).collect();
    while level.len() > 1 {
        if level.len() % 2 == 1 {
            level.push(*level.last().unwrap());
        }
        for (leaf, pos) in positions.iter_mut().enumerate() {
            let sibling = if *pos % 2 == 0 {
                (level[*pos + 1], Side::Right)
            } else {
                (level[*pos - 1], Side::Left)
            };
            proofs[leaf].path.push(sibling);
            *pos /= 2;
        }
        level = level.chunks(2).map(|pair| node_hash(&pair[0], &pair[1])).collect();
    }
    (level[0], proofs)
}

pub fn root<L: AsRef<[u8]>>(leaves: &[L]) -> Digest {
    build(leaves).0
}

pub fn verify(root: &Digest, leaf: &[u8], index: u32, proof: &MerkleProof) -> bool {
    let mut acc = leaf_hash(index, leaf);
    let mut pos = index as u64;
    for (sibling, side) in &proof.path {
        let expected = if pos.is_multiple_of(2) { Side::Right } else { Side::Left };
        if *side != expected {
            return false;
        }
        acc = match side {
            Side::Right => node_hash(&acc, sibling),
            Side::Left => node_hash(sibling, &acc),
        };
        pos /= 2;
    }
    pos == 0 && acc == *root
}
