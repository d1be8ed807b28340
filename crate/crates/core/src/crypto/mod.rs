//! Hashing, threshold signatures, erasure codes and Merkle trees.

pub mod erasure;
pub mod gf256;
pub mod hash;
pub mod merkle;
pub mod threshold;

use serde::{Deserialize, Serialize};

pub use erasure::ErasureChunk;
pub use hash::{hash, Digest};
pub use merkle::MerkleProof;
pub use threshold::{AggregateProof, Signature, ThresholdKeySet, VoteShare};

/// Which signature provider backs a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    #[default]
    Mock,
    Real,
}
