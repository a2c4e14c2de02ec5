//! Erasure code and Merkle commitments checked against frozen vectors from
//! an independent implementation (`fixtures/gen_coding_vectors.py`).

use optbft_core::coding::{commit, decode, encode, merkle_prove, merkle_root, merkle_verify, reconstruct};
use optbft_core::Digest;
use serde_json::Value;

fn vectors() -> Vec<Value> {
    let raw = include_str!("fixtures/coding_vectors.json");
    serde_json::from_str::<Value>(raw).unwrap().as_array().unwrap().clone()
}

fn unhex(v: &Value) -> Vec<u8> {
    hex::decode(v.as_str().unwrap()).unwrap()
}

fn digest(v: &Value) -> Digest {
    Digest(unhex(v).try_into().unwrap())
}

#[test]
fn encoder_matches_independent_oracle() {
    for case in vectors() {
        let n = case["n"].as_u64().unwrap() as usize;
        let k = case["k"].as_u64().unwrap() as usize;
        let msg = unhex(&case["message"]);
        let expected: Vec<Vec<u8>> = case["shares"].as_array().unwrap().iter().map(unhex).collect();
        let cw = encode(&msg, n, k).unwrap();
        assert_eq!(cw.shares(), &expected[..], "n={n} k={k}");
    }
}

#[test]
fn merkle_roots_and_proofs_match_frozen_fixtures() {
    for case in vectors() {
        let n = case["n"].as_u64().unwrap() as usize;
        let shares: Vec<Vec<u8>> = case["shares"].as_array().unwrap().iter().map(unhex).collect();
        let root = digest(&case["root"]);
        assert_eq!(merkle_root(&shares).unwrap(), root);
        for (i, proof) in case["proofs"].as_array().unwrap().iter().enumerate() {
            let ours = merkle_prove(&shares, i).unwrap();
            let theirs: Vec<Digest> = proof.as_array().unwrap().iter().map(digest).collect();
            assert_eq!(ours.siblings, theirs, "n={n} leaf {i}");
            assert!(merkle_verify(&root, i, &shares[i], &ours));
            let other = (i + 1) % n;
            if shares[other] != shares[i] {
                assert!(!merkle_verify(&root, i, &shares[other], &ours));
            }
        }
    }
}

#[test]
fn commitment_root_is_the_merkle_root_of_the_shares() {
    for case in vectors() {
        let n = case["n"].as_u64().unwrap() as usize;
        let k = case["k"].as_u64().unwrap() as usize;
        let c = commit(&unhex(&case["message"]), n, k).unwrap();
        assert_eq!(c.root(), digest(&case["root"]));
        assert!(c.fragments().iter().all(|f| f.verify(n)));
    }
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect())
        .collect()
}

#[test]
fn every_k_subset_decodes_for_small_n() {
    let mut checked = 0usize;
    for n in 1..=8 {
        for k in 1..=n {
            for len in [0usize, 1, 13, 40] {
                let msg: Vec<u8> = (0..len).map(|i| (i * 31 + n * 7 + k) as u8).collect();
                let cw = encode(&msg, n, k).unwrap();
                for set in subsets(n, k) {
                    let frags: Vec<(usize, &[u8])> = set.iter().map(|&i| (i, cw.share(i))).collect();
                    assert_eq!(decode(&frags, n, k).unwrap(), msg, "n={n} k={k} set={set:?}");
                    assert_eq!(reconstruct(&frags, n, k).unwrap(), cw);
                    checked += 1;
                }
            }
        }
    }
    // Every nonempty subset of 0..n is some k-subset, for four message lengths.
    assert_eq!(checked, 4 * (1..=8).map(|n| (1usize << n) - 1).sum::<usize>());
}
