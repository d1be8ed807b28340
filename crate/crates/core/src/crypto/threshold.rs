//! `(2f+1, n)` threshold signatures.
//!
//! The default provider is a deterministic keyed-MAC mock built on SHA-384,
//! whose outputs are exactly [`KAPPA`] bytes so byte accounting matches a
//! pairing-based scheme. Combined proofs are unique per message, like
//! threshold BLS, and can only be produced by [`ThresholdKeySet::combine`]
//! from a quorum of shares that verify.

use std::collections::BTreeMap;
use std::fmt;

use sha2::{Digest as _, Sha384};

use crate::crypto::hash::{hash_parts, Digest};
use crate::error::CryptoError;
use crate::params::KAPPA;
use crate::types::ReplicaId;

const SHARE_DOMAIN: u8 = 0x01;
const SIGNATURE_DOMAIN: u8 = 0x02;
const COMBINED_DOMAIN: u8 = 0x03;

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SigBytes(pub [u8; KAPPA]);

impl fmt::Debug for SigBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sig(")?;
        for b in &self.0[..6] {
            write!(f, "{b:02x}")?;
        }
        write!(f, ")")
    }
}

/// A signature share `σ̂_i` on one digest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VoteShare {
    pub signer: ReplicaId,
    pub message_digest: Digest,
    pub share: SigBytes,
}

/// A combined signature `σ̂` from a quorum of shares.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AggregateProof {
    pub message_digest: Digest,
    pub proof: SigBytes,
}

/// An ordinary per-replica signature (timeouts, view changes, new views).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Signature {
    pub signer: ReplicaId,
    pub sig: SigBytes,
}

#[derive(Clone, Debug)]
pub struct SecretKeyShare {
    pub signer: ReplicaId,
    key: [u8; 32],
}

#[derive(Clone, Debug)]
pub struct PublicKeyShare {
    pub signer: ReplicaId,
    // The mock verifies by recomputation, so the "public" key is the MAC key.
    key: [u8; 32],
}

#[derive(Clone, Debug)]
pub struct MasterPublicKey {
    key: [u8; 32],
}

fn mac(key: &[u8; 32], domain: u8, parts: &[&[u8]]) -> SigBytes {
    let mut h = Sha384::new();
    h.update(key);
    h.update([domain]);
    for p in parts {
        h.update(p);
    }
    SigBytes(h.finalize().into())
}

/// All key material for one deployment.
#[derive(Clone, Debug)]
pub struct ThresholdKeySet {
    n: usize,
    threshold: usize,
    master: [u8; 32],
    shares: Vec<[u8; 32]>,
}

impl ThresholdKeySet {
    /// Deterministic key generation for `n = 3f + 1` replicas.
    pub fn generate(n: usize, f: usize, seed: u64) -> Result<Self, CryptoError> {
        if f == 0 || n != 3 * f + 1 {
            return Err(CryptoError::BadParams(format!("n must equal 3f+1 (n={n}, f={f})")));
        }
        let seed = seed.to_be_bytes();
        let master = hash_parts(&[b"leopard/master", &seed]).0;
        let shares = (0..n as u32)
            .map(|i| hash_parts(&[b"leopard/share", &seed, &i.to_be_bytes()]).0)
            .collect();
        Ok(ThresholdKeySet {
            n,
            threshold: 2 * f + 1,
            master,
            shares,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn secret_key(&self, i: ReplicaId) -> SecretKeyShare {
        SecretKeyShare {
            signer: i,
            key: self.shares[i.index()],
        }
    }

    pub fn public_key(&self, i: ReplicaId) -> PublicKeyShare {
        PublicKeyShare {
            signer: i,
            key: self.shares[i.index()],
        }
    }

    pub fn master_public_key(&self) -> MasterPublicKey {
        MasterPublicKey { key: self.master }
    }

    pub fn sign_share(&self, signer: ReplicaId, digest: &Digest) -> VoteShare {
        sign_share(&self.secret_key(signer), digest)
    }

    pub fn verify_share(&self, share: &VoteShare, digest: &Digest) -> bool {
        share.signer.index() < self.n && verify_share(&self.public_key(share.signer), share, digest)
    }

    /// Combines shares into a proof. Invalid and duplicate shares are
    /// filtered before the threshold is checked.
    pub fn combine<'a>(&self, shares: impl IntoIterator<Item = &'a VoteShare>) -> Result<AggregateProof, CryptoError> {
        let mut digest = None;
        let mut valid = BTreeMap::new();
        for share in shares {
            match digest {
                None => digest = Some(share.message_digest),
                Some(d) if d != share.message_digest => return Err(CryptoError::MixedDigests),
                Some(_) => {}
            }
            if self.verify_share(share, &share.message_digest) {
                valid.insert(share.signer, *share);
            }
        }
        if valid.len() < self.threshold {
            return Err(CryptoError::InsufficientShares {
                needed: self.threshold,
                got: valid.len(),
            });
        }
        let digest = digest.expect("non-empty share set");
        Ok(AggregateProof {
            message_digest: digest,
            proof: mac(&self.master, COMBINED_DOMAIN, &[&digest.0]),
        })
    }

    pub fn verify_combined(&self, proof: &AggregateProof, digest: &Digest) -> bool {
        verify_combined(&self.master_public_key(), proof, digest)
    }

    pub fn sign(&self, signer: ReplicaId, digest: &Digest) -> Signature {
        Signature {
            signer,
            sig: mac(&self.shares[signer.index()], SIGNATURE_DOMAIN, &[&digest.0]),
        }
    }

    pub fn verify_signature(&self, sig: &Signature, digest: &Digest) -> bool {
        sig.signer.index() < self.n && mac(&self.shares[sig.signer.index()], SIGNATURE_DOMAIN, &[&digest.0]) == sig.sig
    }
}

pub fn sign_share(key: &SecretKeyShare, digest: &Digest) -> VoteShare {
    VoteShare {
        signer: key.signer,
        message_digest: *digest,
        share: mac(&key.key, SHARE_DOMAIN, &[&digest.0]),
    }
}

pub fn verify_share(key: &PublicKeyShare, share: &VoteShare, digest: &Digest) -> bool {
    share.signer == key.signer
        && share.message_digest == *digest
        && mac(&key.key, SHARE_DOMAIN, &[&digest.0]) == share.share
}

pub fn verify_combined(mpk: &MasterPublicKey, proof: &AggregateProof, digest: &Digest) -> bool {
    proof.message_digest == *digest && mac(&mpk.key, COMBINED_DOMAIN, &[&digest.0]) == proof.proof
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::hash::hash;

    fn keys(f: usize) -> ThresholdKeySet {
        ThresholdKeySet::generate(3 * f + 1, f, 42).unwrap()
    }

    #[test]
    fn keygen_is_deterministic() {
        let a = ThresholdKeySet::generate(4, 1, 9).unwrap();
        let b = ThresholdKeySet::generate(4, 1, 9).unwrap();
        let c = ThresholdKeySet::generate(4, 1, 10).unwrap();
        assert_eq!(a.shares, b.shares);
        assert_eq!(a.master, b.master);
        assert_ne!(a.shares, c.shares);
        assert_ne!(a.master, c.master);
    }

    #[test]
    fn keygen_rejects_bad_n() {
        assert!(matches!(
            ThresholdKeySet::generate(5, 1, 0),
            Err(CryptoError::BadParams(_))
        ));
        assert!(ThresholdKeySet::generate(1, 0, 0).is_err());
    }

    #[test]
    fn share_sign_verify() {
        let ks = keys(1);
        let d = hash(b"block");
        let share = sign_share(&ks.secret_key(ReplicaId(1)), &d);
        assert!(verify_share(&ks.public_key(ReplicaId(1)), &share, &d));

        let mut flipped = d;
        flipped.0[0] ^= 1;
        assert!(!verify_share(&ks.public_key(ReplicaId(1)), &share, &flipped));
        assert!(!verify_share(&ks.public_key(ReplicaId(2)), &share, &d));
    }

    #[test]
    fn combine_needs_quorum() {
        let ks = keys(1);
        let d = hash(b"block");
        let shares: Vec<_> = (0..3).map(|i| ks.sign_share(ReplicaId(i), &d)).collect();
        let proof = ks.combine(&shares).unwrap();
        assert!(verify_combined(&ks.master_public_key(), &proof, &d));
        assert!(!ks.verify_combined(&proof, &hash(b"other")));

        assert_eq!(
            ks.combine(&shares[..2]),
            Err(CryptoError::InsufficientShares { needed: 3, got: 2 })
        );
    }

    #[test]
    fn combine_filters_each_corrupted_position() {
        let ks = keys(1);
        let d = hash(b"block");
        for bad in 0..3 {
            let mut shares: Vec<_> = (0..3).map(|i| ks.sign_share(ReplicaId(i), &d)).collect();
            shares[bad].share.0[bad * 7] ^= 0x80;
            assert_eq!(
                ks.combine(&shares),
                Err(CryptoError::InsufficientShares { needed: 3, got: 2 }),
                "corrupted share at {bad} accepted"
            );
        }
    }

    #[test]
    fn duplicate_signers_count_once() {
        let ks = keys(1);
        let d = hash(b"block");
        let s0 = ks.sign_share(ReplicaId(0), &d);
        let s1 = ks.sign_share(ReplicaId(1), &d);
        assert!(ks.combine(&[s0, s1, s1]).is_err());
    }

    #[test]
    fn mixed_digests_rejected() {
        let ks = keys(1);
        let a = ks.sign_share(ReplicaId(0), &hash(b"a"));
        let b = ks.sign_share(ReplicaId(1), &hash(b"b"));
        assert_eq!(ks.combine(&[a, b]), Err(CryptoError::MixedDigests));
    }

    #[test]
    fn signatures_are_bound_to_signer_and_digest() {
        let ks = keys(2);
        let d = hash(b"timeout");
        let sig = ks.sign(ReplicaId(3), &d);
        assert!(ks.verify_signature(&sig, &d));
        assert!(!ks.verify_signature(&sig, &hash(b"x")));
        let forged = Signature {
            signer: ReplicaId(4),
            sig: sig.sig,
        };
        assert!(!ks.verify_signature(&forged, &d));
        // A signature is not a vote share.
        let share = VoteShare {
            signer: ReplicaId(3),
            message_digest: d,
            share: sig.sig,
        };
        assert!(!ks.verify_share(&share, &d));
    }
}
