//! Systematic `(f+1, n)` Reed-Solomon code over GF(256).
//!
//! The input is prefixed with its length (u32, big-endian), zero-padded to a
//! multiple of `f + 1` and split into `f + 1` data shards, which are chunks
//! `0..=f`. Chunk `j` for `j > f` holds the evaluation at `x = j` of the
//! degree-`f` polynomial through the data shards, byte position by byte
//! position. Any `f + 1` chunks determine that polynomial.

use crate::crypto::gf256;
use crate::crypto::hash::Digest;
use crate::crypto::merkle::{self, MerkleProof};
use crate::error::CryptoError;

/// One authenticated chunk of an encoding.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ErasureChunk {
    pub index: u32,
    pub data: Vec<u8>,
    pub root: Digest,
    pub proof: MerkleProof,
}

impl ErasureChunk {
    pub fn verify(&self) -> bool {
        merkle::verify(&self.root, &self.data, self.index, &self.proof)
    }
}

fn check_params(f: usize, n: usize) -> Result<(), CryptoError> {
    if f + 1 > n {
        return Err(CryptoError::BadParams(format!("f+1={} exceeds n={n}", f + 1)));
    }
    if n > 256 {
        return Err(CryptoError::BadParams(format!("n={n} exceeds the field size")));
    }
    Ok(())
}

/// Length of each chunk for a `len`-byte input.
pub fn chunk_len(len: usize, f: usize) -> usize {
    (len + 4).div_ceil(f + 1)
}

/// Encodes `data` into `n` chunk payloads.
pub fn encode(data: &[u8], f: usize, n: usize) -> Result<Vec<Vec<u8>>, CryptoError> {
    check_params(f, n)?;
    let k = f + 1;
    let shard = chunk_len(data.len(), f);
    let mut padded = Vec::with_capacity(shard * k);
    padded.extend_from_slice(&(data.len() as u32).to_be_bytes());
    padded.extend_from_slice(data);
    padded.resize(shard * k, 0);

    let mut chunks: Vec<Vec<u8>> = padded.chunks(shard).map(<[u8]>::to_vec).collect();
    let points: Vec<u8> = (0..k as u8).collect();
    for j in k..n {
        let coeffs = gf256::lagrange_coefficients(&points, j as u8);
        let mut parity = vec![0u8; shard];
        for (c, src) in coeffs.iter().zip(&chunks[..k]) {
            gf256::mul_add_into(&mut parity, src, *c);
        }
        chunks.push(parity);
    }
    Ok(chunks)
}

/// Recovers the original bytes from at least `f + 1` chunks `(index, payload)`
/// with distinct indices.
pub fn decode(chunks: &[(u32, &[u8])], f: usize, n: usize) -> Result<Vec<u8>, CryptoError> {
    check_params(f, n)?;
    let k = f + 1;
    let mut picked: Vec<(u32, &[u8])> = Vec::with_capacity(k);
    for &(idx, data) in chunks {
        if idx as usize >= n {
            return Err(CryptoError::InconsistentChunks(format!("index {idx} out of range")));
        }
        if picked.iter().any(|(i, _)| *i == idx) {
            continue;
        }
        picked.push((idx, data));
        if picked.len() == k {
            break;
        }
    }
    if picked.len() < k {
        return Err(CryptoError::InsufficientChunks {
            needed: k,
            got: picked.len(),
        });
    }
    let shard = picked[0].1.len();
    if shard == 0 || picked.iter().any(|(_, d)| d.len() != shard) {
        return Err(CryptoError::InconsistentChunks("chunk lengths differ".into()));
    }

    let points: Vec<u8> = picked.iter().map(|(i, _)| *i as u8).collect();
    let mut padded = Vec::with_capacity(shard * k);
    for target in 0..k as u32 {
        if let Some((_, d)) = picked.iter().find(|(i, _)| *i == target) {
            padded.extend_from_slice(d);
            continue;
        }
        let coeffs = gf256::lagrange_coefficients(&points, target as u8);
        let mut out = vec![0u8; shard];
        for (c, (_, src)) in coeffs.iter().zip(&picked) {
            gf256::mul_add_into(&mut out, src, *c);
        }
        padded.extend_from_slice(&out);
    }
    let len = u32::from_be_bytes(padded[..4].try_into().unwrap()) as usize;
    if len + 4 > padded.len() {
        return Err(CryptoError::InconsistentChunks("length prefix exceeds data".into()));
    }
    Ok(padded[4..4 + len].to_vec())
}

/// Encodes `data` and authenticates every chunk under one Merkle root.
pub fn encode_authenticated(data: &[u8], f: usize, n: usize) -> Result<Vec<ErasureChunk>, CryptoError> {
    let payloads = encode(data, f, n)?;
    let (root, proofs) = merkle::build(&payloads);
    Ok(payloads
        .into_iter()
        .zip(proofs)
        .enumerate()
        .map(|(i, (data, proof))| ErasureChunk {
            index: i as u32,
            data,
            root,
            proof,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// All `r`-subsets of `0..n`.
    fn subsets(n: usize, r: usize) -> Vec<Vec<usize>> {
        fn go(start: usize, n: usize, r: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if cur.len() == r {
                out.push(cur.clone());
                return;
            }
            for i in start..n {
                cur.push(i);
                go(i + 1, n, r, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        go(0, n, r, &mut Vec::new(), &mut out);
        out
    }

    fn decode_subset(chunks: &[Vec<u8>], subset: &[usize], f: usize, n: usize) -> Vec<u8> {
        let picked: Vec<(u32, &[u8])> = subset.iter().map(|&i| (i as u32, chunks[i].as_slice())).collect();
        decode(&picked, f, n).unwrap()
    }

    #[test]
    fn f1_n4_every_pair_decodes() {
        let data = b"0123456789".to_vec();
        let chunks = encode(&data, 1, 4).unwrap();
        assert_eq!(chunks.len(), 4);
        let pairs = subsets(4, 2);
        assert_eq!(pairs.len(), 6);
        for s in pairs {
            assert_eq!(decode_subset(&chunks, &s, 1, 4), data);
        }
    }

    #[test]
    fn f2_n7_every_triple_decodes() {
        let data: Vec<u8> = (0..1000u32).map(|i| (i * 31 % 251) as u8).collect();
        let chunks = encode(&data, 2, 7).unwrap();
        let triples = subsets(7, 3);
        assert_eq!(triples.len(), 35);
        for s in triples {
            assert_eq!(decode_subset(&chunks, &s, 2, 7), data);
        }
    }

    #[test]
    fn too_few_chunks() {
        let chunks = encode(b"hello", 2, 7).unwrap();
        let picked: Vec<(u32, &[u8])> = vec![(0, &chunks[0]), (5, &chunks[5])];
        assert_eq!(
            decode(&picked, 2, 7),
            Err(CryptoError::InsufficientChunks { needed: 3, got: 2 })
        );
        // Repeated indices do not count twice.
        let picked: Vec<(u32, &[u8])> = vec![(0, &chunks[0]), (0, &chunks[0]), (5, &chunks[5])];
        assert!(matches!(
            decode(&picked, 2, 7),
            Err(CryptoError::InsufficientChunks { .. })
        ));
    }

    #[test]
    fn mismatched_lengths() {
        let chunks = encode(b"hello world", 1, 4).unwrap();
        let short = &chunks[1][..chunks[1].len() - 1];
        let picked: Vec<(u32, &[u8])> = vec![(0, &chunks[0]), (1, short)];
        assert!(matches!(decode(&picked, 1, 4), Err(CryptoError::InconsistentChunks(_))));
    }

    #[test]
    fn bad_params() {
        assert!(matches!(encode(b"x", 4, 4), Err(CryptoError::BadParams(_))));
    }

    #[test]
    fn chunk_size_matches_formula() {
        let data = vec![7u8; 298_000];
        let chunks = encode(&data, 42, 128).unwrap();
        assert_eq!(chunks[0].len(), (298_000 + 4usize).div_ceil(43));
        assert!(chunks.iter().all(|c| c.len() == chunks[0].len()));
    }

    #[test]
    fn authenticated_chunks_verify() {
        let chunks = encode_authenticated(b"some datablock bytes", 2, 7).unwrap();
        assert!(chunks.iter().all(ErasureChunk::verify));
        let mut bad = chunks[3].clone();
        bad.data[0] ^= 1;
        assert!(!bad.verify());
    }

    #[test]
    fn mds_exhaustive_small_n() {
        use rand::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for f in 1..=4 {
            let n = 3 * f + 1;
            let mut data = vec![0u8; 50 + 17 * f];
            rng.fill_bytes(&mut data);
            let chunks = encode(&data, f, n).unwrap();
            for s in subsets(n, f + 1) {
                assert_eq!(decode_subset(&chunks, &s, f, n), data, "f={f} subset={s:?}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn random_subsets_decode(
            data in proptest::collection::vec(any::<u8>(), 1..600),
            f in 1usize..20,
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let n = 3 * f + 1;
            let chunks = encode(&data, f, n).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            prop_assert_eq!(decode_subset(&chunks, &idx[..f + 1], f, n), data);
        }
    }
}
