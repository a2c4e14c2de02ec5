//! Binary Merkle tree over SHA-256 with domain-separated hashing.
//!
//! Leaves hash as `H(0x00 ‖ leaf)`, internal nodes as `H(0x01 ‖ l ‖ r)`.
//! An unpaired last node is promoted to the next level unchanged, so a
//! proof carries no sibling for that level.

use sha2::{Digest as _, Sha256};

use super::CodingError;
use crate::types::Digest;

const LEAF: u8 = 0x00;
const NODE: u8 = 0x01;

/// Authentication path for one leaf. The sibling order is bottom-up; the
/// left/right position at each level follows from the leaf index and
/// `leaf_count`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct MerkleProof {
    pub leaf_count: usize,
    pub siblings: Vec<Digest>,
}

pub fn leaf_hash(leaf: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update([LEAF]);
    h.update(leaf);
    Digest(h.finalize().into())
}

pub fn node_hash(l: &Digest, r: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update([NODE]);
    h.update(l.0);
    h.update(r.0);
    Digest(h.finalize().into())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MerkleTree {
    // levels[0] are leaf hashes; the last level holds the root alone.
    levels: Vec<Vec<Digest>>,
}

impl MerkleTree {
    pub fn from_leaves<L: AsRef<[u8]>>(leaves: &[L]) -> Result<Self, CodingError> {
        if leaves.is_empty() {
            return Err(CodingError::EmptyTree);
        }
        let mut levels = vec![leaves.iter().map(|l| leaf_hash(l.as_ref())).collect::<Vec<_>>()];
        while levels.last().map_or(0, Vec::len) > 1 {
            let prev = levels.last().expect("non-empty");
            let next = prev
                .chunks(2)
                .map(|pair| match pair {
                    [l, r] => node_hash(l, r),
                    [single] => *single,
                    _ => unreachable!(),
                })
                .collect();
            levels.push(next);
        }
        Ok(MerkleTree { levels })
    }

    pub fn root(&self) -> Digest {
        self.levels.last().expect("non-empty")[0]
    }

    pub fn leaf_count(&self) -> usize {
        self.levels[0].len()
    }

    pub fn prove(&self, index: usize) -> Result<MerkleProof, CodingError> {
        if index >= self.leaf_count() {
            return Err(CodingError::IndexOutOfRange(index));
        }
        let mut siblings = Vec::new();
        let mut idx = index;
        for level in &self.levels[..self.levels.len() - 1] {
            let sib = idx ^ 1;
            if sib < level.len() {
                siblings.push(level[sib]);
            }
            idx /= 2;
        }
        Ok(MerkleProof { leaf_count: self.leaf_count(), siblings })
    }
}

pub fn merkle_root<L: AsRef<[u8]>>(leaves: &[L]) -> Result<Digest, CodingError> {
    MerkleTree::from_leaves(leaves).map(|t| t.root())
}

pub fn merkle_prove<L: AsRef<[u8]>>(leaves: &[L], index: usize) -> Result<MerkleProof, CodingError> {
    MerkleTree::from_leaves(leaves)?.prove(index)
}

pub fn merkle_verify(root: &Digest, index: usize, leaf: &[u8], proof: &MerkleProof) -> bool {
    if index >= proof.leaf_count {
        return false;
    }
    let mut acc = leaf_hash(leaf);
    let mut idx = index;
    let mut width = proof.leaf_count;
    let mut siblings = proof.siblings.iter();
    while width > 1 {
        let promoted = idx == width - 1 && width % 2 == 1;
        if !promoted {
            let Some(sib) = siblings.next() else { return false };
            acc = if idx.is_multiple_of(2) { node_hash(&acc, sib) } else { node_hash(sib, &acc) };
        }
        idx /= 2;
        width = width.div_ceil(2);
    }
    siblings.next().is_none() && acc == *root
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaves(count: usize) -> Vec<Vec<u8>> {
        (0..count).map(|i| vec![i as u8; i + 1]).collect()
    }

    #[test]
    fn single_leaf_root() {
        assert_eq!(merkle_root(&[b"L"]).unwrap(), leaf_hash(b"L"));
    }

    #[test]
    fn two_leaf_root() {
        let expect = node_hash(&leaf_hash(b"A"), &leaf_hash(b"B"));
        assert_eq!(merkle_root(&[b"A", b"B"]).unwrap(), expect);
    }

    #[test]
    fn odd_node_is_promoted() {
        let l = leaves(3);
        let expect = node_hash(&node_hash(&leaf_hash(&l[0]), &leaf_hash(&l[1])), &leaf_hash(&l[2]));
        assert_eq!(merkle_root(&l).unwrap(), expect);
    }

    #[test]
    fn empty_tree_rejected() {
        assert_eq!(merkle_root::<&[u8]>(&[]), Err(CodingError::EmptyTree));
    }

    #[test]
    fn every_proof_verifies() {
        for count in 1..=17 {
            let l = leaves(count);
            let tree = MerkleTree::from_leaves(&l).unwrap();
            for (i, leaf) in l.iter().enumerate() {
                let p = tree.prove(i).unwrap();
                assert!(merkle_verify(&tree.root(), i, leaf, &p), "count {count} index {i}");
            }
        }
    }

    #[test]
    fn proof_is_position_bound() {
        let l = leaves(7);
        let tree = MerkleTree::from_leaves(&l).unwrap();
        let p = tree.prove(0).unwrap();
        assert!(!merkle_verify(&tree.root(), 1, &l[0], &p));
        assert!(!merkle_verify(&tree.root(), 1, &l[1], &p));
    }

    #[test]
    fn truncated_or_padded_proof_fails() {
        let l = leaves(7);
        let tree = MerkleTree::from_leaves(&l).unwrap();
        let mut p = tree.prove(3).unwrap();
        p.siblings.pop();
        assert!(!merkle_verify(&tree.root(), 3, &l[3], &p));
        let mut p = tree.prove(3).unwrap();
        p.siblings.push(Digest::default());
        assert!(!merkle_verify(&tree.root(), 3, &l[3], &p));
    }

    #[test]
    fn any_bit_flip_fails() {
        let l = leaves(5);
        let tree = MerkleTree::from_leaves(&l).unwrap();
        let p = tree.prove(2).unwrap();
        for byte in 0..l[2].len() {
            for bit in 0..8 {
                let mut leaf = l[2].clone();
                leaf[byte] ^= 1 << bit;
                assert!(!merkle_verify(&tree.root(), 2, &leaf, &p));
            }
        }
        for s in 0..p.siblings.len() {
            for byte in 0..32 {
                let mut bad = p.clone();
                bad.siblings[s].0[byte] ^= 0x80;
                assert!(!merkle_verify(&tree.root(), 2, &l[2], &bad));
            }
        }
        assert!(!merkle_verify(&tree.root(), 3, &l[2], &p));
        assert!(!merkle_verify(&tree.root(), 2 ^ 4, &l[2], &p));
    }

    #[test]
    fn out_of_range_index() {
        let tree = MerkleTree::from_leaves(&leaves(3)).unwrap();
        assert_eq!(tree.prove(3), Err(CodingError::IndexOutOfRange(3)));
    }
}
