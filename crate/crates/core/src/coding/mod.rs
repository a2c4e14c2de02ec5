//! Erasure coding and Merkle commitments for the coded protocols.

pub mod gf256;
pub mod merkle;
pub mod rs;

use bytes::Bytes;
use thiserror::Error;

pub use merkle::{merkle_prove, merkle_root, merkle_verify, MerkleProof, MerkleTree};
pub use rs::{decode, encode, reconstruct, CodewordVector};

use crate::types::Digest;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodingError {
    #[error("invalid code parameters n = {n}, k = {k}")]
    InvalidParams { n: usize, k: usize },
    #[error("need {need} shares, have {have}")]
    NotEnoughShares { have: usize, need: usize },
    #[error("duplicate share index {0}")]
    DuplicateIndex(usize),
    #[error("index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("shares have inconsistent lengths")]
    InconsistentShareLength,
    #[error("decoded data has a malformed length prefix")]
    MalformedFrame,
    #[error("merkle tree needs at least one leaf")]
    EmptyTree,
}

/// One share of a committed vector together with its inclusion proof.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CodedFragment {
    pub index: usize,
    pub share: Bytes,
    pub proof: MerkleProof,
    pub root: Digest,
}

impl CodedFragment {
    /// Checks the inclusion proof against the fragment's own root for a tree
    /// of exactly `n` leaves.
    pub fn verify(&self, n: usize) -> bool {
        self.proof.leaf_count == n && merkle_verify(&self.root, self.index, &self.share, &self.proof)
    }
}

/// Merkle commitment over a vector of shares plus every fragment.
#[derive(Debug, Clone, Hash)]
pub struct Committed {
    pub vector: CodewordVector,
    pub tree: MerkleTree,
}

impl Committed {
    pub fn new(vector: CodewordVector) -> Self {
        let tree = MerkleTree::from_leaves(vector.shares()).expect("n >= 1");
        Committed { vector, tree }
    }

    pub fn root(&self) -> Digest {
        self.tree.root()
    }

    pub fn fragment(&self, i: usize) -> CodedFragment {
        CodedFragment {
            index: i,
            share: Bytes::copy_from_slice(self.vector.share(i)),
            proof: self.tree.prove(i).expect("index in range"),
            root: self.root(),
        }
    }

    pub fn fragments(&self) -> Vec<CodedFragment> {
        (0..self.vector.n()).map(|i| self.fragment(i)).collect()
    }
}

/// Encodes `m` and commits to the share vector.
pub fn commit(m: &[u8], n: usize, k: usize) -> Result<Committed, CodingError> {
    encode(m, n, k).map(Committed::new)
}

/// Interpolates the full vector from the `k` lowest-indexed fragments and
/// returns it only if its Merkle root equals `h`.
///
/// Fragments are expected to be Merkle-verified against `h` already.
pub fn verify_interpolation(
    fragments: &[CodedFragment],
    h: &Digest,
    n: usize,
    k: usize,
) -> Result<Option<Committed>, CodingError> {
    let raw: Vec<(usize, &[u8])> = fragments.iter().map(|f| (f.index, &f.share[..])).collect();
    let vector = reconstruct(&raw, n, k)?;
    let committed = Committed::new(vector);
    Ok((committed.root() == *h).then_some(committed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn honest_fragments_interpolate() {
        let c = commit(b"interpolate", 7, 3).unwrap();
        let frags = c.fragments();
        assert!(frags.iter().all(|f| f.verify(7)));
        let all = verify_interpolation(&frags, &c.root(), 7, 3).unwrap().unwrap();
        let some = verify_interpolation(&frags[4..], &c.root(), 7, 3).unwrap().unwrap();
        assert_eq!(all.vector, c.vector);
        assert_eq!(some.vector, c.vector);
    }

    #[test]
    fn tampered_vector_is_rejected() {
        let good = encode(b"hello", 4, 2).unwrap();
        let mut shares = good.shares().to_vec();
        shares[3][0] ^= 1;
        let bad = Committed::new(CodewordVector::from_shares_unchecked(2, shares));
        let frags = bad.fragments();
        assert!(frags.iter().all(|f| f.verify(4)));
        for pair in [[0, 1], [0, 3], [2, 3], [1, 2]] {
            let chosen: Vec<_> = pair.iter().map(|&i| frags[i].clone()).collect();
            assert!(verify_interpolation(&chosen, &bad.root(), 4, 2).unwrap().is_none());
        }
    }

    #[test]
    fn too_few_fragments() {
        let c = commit(b"x", 4, 2).unwrap();
        assert_eq!(
            verify_interpolation(&c.fragments()[..1], &c.root(), 4, 2).unwrap_err(),
            CodingError::NotEnoughShares { have: 1, need: 2 }
        );
    }

    #[test]
    fn fragment_verify_binds_leaf_count() {
        let c = commit(b"x", 4, 2).unwrap();
        let f = c.fragment(1);
        assert!(!f.verify(5));
    }
}
