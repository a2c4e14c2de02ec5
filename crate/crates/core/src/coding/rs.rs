//! Systematic Reed-Solomon erasure code over GF(2^8).
//!
//! Share `i` is the evaluation at `x = i` of the degree `< k` polynomial
//! through the `k` data stripes, so shares `0..k` are the data itself.
//! Messages are framed with an 8-byte little-endian length and zero padded.

use super::gf256;
use super::CodingError;

const LEN_PREFIX: usize = 8;

/// All `n` shares of one encoded message.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CodewordVector {
    n: usize,
    k: usize,
    shares: Vec<Vec<u8>>,
}

impl CodewordVector {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn shares(&self) -> &[Vec<u8>] {
        &self.shares
    }

    pub fn share(&self, i: usize) -> &[u8] {
        &self.shares[i]
    }

    pub fn share_len(&self) -> usize {
        self.shares[0].len()
    }

    /// Recovers the framed message from the systematic shares.
    pub fn message(&self) -> Result<Vec<u8>, CodingError> {
        unframe(self.shares[..self.k].concat())
    }

    /// Builds a vector from raw shares without checking that it is a codeword.
    pub fn from_shares_unchecked(k: usize, shares: Vec<Vec<u8>>) -> Self {
        CodewordVector { n: shares.len(), k, shares }
    }
}

fn check_params(n: usize, k: usize) -> Result<(), CodingError> {
    if k == 0 || k > n || n > 255 {
        return Err(CodingError::InvalidParams { n, k });
    }
    Ok(())
}

/// Share length for a message of `len` bytes split into `k` stripes.
pub fn share_len(len: usize, k: usize) -> usize {
    (len + LEN_PREFIX).div_ceil(k)
}

pub fn encode(m: &[u8], n: usize, k: usize) -> Result<CodewordVector, CodingError> {
    check_params(n, k)?;
    let width = share_len(m.len(), k);
    let mut framed = Vec::with_capacity(width * k);
    framed.extend_from_slice(&(m.len() as u64).to_le_bytes());
    framed.extend_from_slice(m);
    framed.resize(width * k, 0);

    let mut shares: Vec<Vec<u8>> = framed.chunks(width).map(<[u8]>::to_vec).collect();
    let xs: Vec<u8> = (0..k as u8).collect();
    let parity_xs: Vec<u8> = (k as u8..n as u8).collect();
    for row in gf256::lagrange_rows(&xs, &parity_xs) {
        let mut out = vec![0u8; width];
        for (c, data) in row.iter().zip(&shares[..k]) {
            gf256::mul_acc(&mut out, data, *c);
        }
        shares.push(out);
    }
    Ok(CodewordVector { n, k, shares })
}

/// Re-derives every share from any `k` of them. Extra fragments beyond the
/// `k` lowest indices are ignored.
pub fn reconstruct(
    fragments: &[(usize, &[u8])],
    n: usize,
    k: usize,
) -> Result<CodewordVector, CodingError> {
    check_params(n, k)?;
    let chosen = select(fragments, n, k)?;
    let xs: Vec<u8> = chosen.iter().map(|(i, _)| *i as u8).collect();
    let all: Vec<u8> = (0..n as u8).collect();
    let width = chosen[0].1.len();
    let shares = gf256::lagrange_rows(&xs, &all)
        .into_iter()
        .map(|row| {
            let mut out = vec![0u8; width];
            for (c, (_, s)) in row.iter().zip(&chosen) {
                gf256::mul_acc(&mut out, s, *c);
            }
            out
        })
        .collect();
    Ok(CodewordVector { n, k, shares })
}

pub fn decode(fragments: &[(usize, &[u8])], n: usize, k: usize) -> Result<Vec<u8>, CodingError> {
    check_params(n, k)?;
    let chosen = select(fragments, n, k)?;
    let xs: Vec<u8> = chosen.iter().map(|(i, _)| *i as u8).collect();
    let data_xs: Vec<u8> = (0..k as u8).collect();
    let width = chosen[0].1.len();
    let mut framed = Vec::with_capacity(width * k);
    for row in gf256::lagrange_rows(&xs, &data_xs) {
        let mut out = vec![0u8; width];
        for (c, (_, s)) in row.iter().zip(&chosen) {
            gf256::mul_acc(&mut out, s, *c);
        }
        framed.extend_from_slice(&out);
    }
    unframe(framed)
}

// Validates the fragment set and returns the `k` lowest-indexed entries.
fn select<'a>(
    fragments: &[(usize, &'a [u8])],
    n: usize,
    k: usize,
) -> Result<Vec<(usize, &'a [u8])>, CodingError> {
    let mut sorted = fragments.to_vec();
    sorted.sort_by_key(|(i, _)| *i);
    for w in sorted.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(CodingError::DuplicateIndex(w[0].0));
        }
    }
    if let Some((i, _)) = sorted.iter().find(|(i, _)| *i >= n) {
        return Err(CodingError::IndexOutOfRange(*i));
    }
    if sorted.len() < k {
        return Err(CodingError::NotEnoughShares { have: sorted.len(), need: k });
    }
    let width = sorted[0].1.len();
    if width == 0 || sorted.iter().any(|(_, s)| s.len() != width) {
        return Err(CodingError::InconsistentShareLength);
    }
    sorted.truncate(k);
    Ok(sorted)
}

fn unframe(mut framed: Vec<u8>) -> Result<Vec<u8>, CodingError> {
    if framed.len() < LEN_PREFIX {
        return Err(CodingError::MalformedFrame);
    }
    let len = u64::from_le_bytes(framed[..LEN_PREFIX].try_into().expect("8 bytes"));
    let body = framed.len() - LEN_PREFIX;
    if len > body as u64 {
        return Err(CodingError::MalformedFrame);
    }
    framed.truncate(LEN_PREFIX + len as usize);
    framed.drain(..LEN_PREFIX);
    Ok(framed)
}
