use std::collections::BTreeSet;

use bytes::{Buf, BufMut, Bytes, BytesMut};
use thiserror::Error;

use crate::quorum::SystemParams;
use crate::types::{Digest, PartyId};

pub type Round = u64;

/// Deterministic round-robin leader schedule.
pub fn leader(round: Round, n: usize) -> PartyId {
    (round % n as u64) as PartyId
}

/// Edge target: a vertex named by round, source and content digest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VertexRef {
    pub round: Round,
    pub source: PartyId,
    pub digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Vertex {
    pub round: Round,
    pub source: PartyId,
    pub block: Bytes,
    pub strong_edges: BTreeSet<VertexRef>,
    pub weak_edges: BTreeSet<VertexRef>,
    pub nv_edges: BTreeSet<VertexRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VertexError {
    #[error("vertex encoding truncated")]
    Truncated,
    #[error("trailing bytes after vertex")]
    TrailingBytes,
    #[error("duplicate edge")]
    DuplicateEdge,
    #[error("source {0} out of range")]
    BadSource(PartyId),
    #[error("round must be at least 1")]
    ZeroRound,
    #[error("strong edge to wrong round or repeated source")]
    BadStrongEdge,
    #[error("too few strong edges: {have} < {need}")]
    TooFewStrongEdges { have: usize, need: usize },
    #[error("weak edge must point below the previous round")]
    BadWeakEdge,
    #[error("no-vote edges are only allowed on a leader vertex that skips the previous leader")]
    UnexpectedNoVoteEdges,
    #[error("no-vote edge set malformed or smaller than 2f")]
    BadNoVoteEdges,
}

const REF_LEN: usize = 8 + 2 + 32;

impl Vertex {
    pub fn reference(&self) -> VertexRef {
        VertexRef { round: self.round, source: self.source, digest: self.digest() }
    }

    pub fn digest(&self) -> Digest {
        Digest::of(&self.encode())
    }

    pub fn is_leader(&self, n: usize) -> bool {
        self.source == leader(self.round, n)
    }

    /// Whether some strong edge points at the previous round's leader.
    pub fn has_strong_edge_to_leader(&self, n: usize) -> bool {
        self.round > 1 && self.strong_edges.iter().any(|e| e.source == leader(self.round - 1, n))
    }

    /// A leader vertex that skips the previous leader and must carry no-vote edges.
    pub fn needs_no_vote_proof(&self, n: usize) -> bool {
        self.round > 1 && self.is_leader(n) && !self.has_strong_edge_to_leader(n)
    }

    pub fn encode(&self) -> Bytes {
        let edges = self.strong_edges.len() + self.weak_edges.len() + self.nv_edges.len();
        let mut buf = BytesMut::with_capacity(8 + 2 + 4 + self.block.len() + 6 + edges * REF_LEN);
        buf.put_u64_le(self.round);
        buf.put_u16_le(self.source as u16);
        buf.put_u32_le(self.block.len() as u32);
        buf.put_slice(&self.block);
        for set in [&self.strong_edges, &self.weak_edges, &self.nv_edges] {
            buf.put_u16_le(set.len() as u16);
            for e in set {
                buf.put_u64_le(e.round);
                buf.put_u16_le(e.source as u16);
                buf.put_slice(&e.digest.0);
            }
        }
        buf.freeze()
    }

    pub fn decode(mut data: &[u8]) -> Result<Vertex, VertexError> {
        fn need(data: &[u8], len: usize) -> Result<(), VertexError> {
            if data.remaining() < len {
                Err(VertexError::Truncated)
            } else {
                Ok(())
            }
        }
        need(data, 14)?;
        let round = data.get_u64_le();
        let source = data.get_u16_le() as PartyId;
        let block_len = data.get_u32_le() as usize;
        need(data, block_len)?;
        let block = Bytes::copy_from_slice(&data[..block_len]);
        data.advance(block_len);
        let mut sets: [BTreeSet<VertexRef>; 3] = Default::default();
        for set in &mut sets {
            need(data, 2)?;
            let count = data.get_u16_le() as usize;
            need(data, count * REF_LEN)?;
            for _ in 0..count {
                let round = data.get_u64_le();
                let source = data.get_u16_le() as PartyId;
                let mut digest = [0u8; 32];
                data.copy_to_slice(&mut digest);
                if !set.insert(VertexRef { round, source, digest: Digest(digest) }) {
                    return Err(VertexError::DuplicateEdge);
                }
            }
        }
        if data.has_remaining() {
            return Err(VertexError::TrailingBytes);
        }
        let [strong_edges, weak_edges, nv_edges] = sets;
        Ok(Vertex { round, source, block, strong_edges, weak_edges, nv_edges })
    }

    /// Checks the shape rules that need no DAG context.
    pub fn check_structure(&self, params: SystemParams) -> Result<(), VertexError> {
        let (n, f) = (params.n(), params.f());
        if self.source >= n {
            return Err(VertexError::BadSource(self.source));
        }
        if self.round == 0 {
            return Err(VertexError::ZeroRound);
        }
        let mut sources = BTreeSet::new();
        for e in &self.strong_edges {
            if e.round == 0 || e.round + 1 != self.round || e.source >= n || !sources.insert(e.source) {
                return Err(VertexError::BadStrongEdge);
            }
        }
        if self.round > 1 && self.strong_edges.len() < 2 * f + 1 {
            return Err(VertexError::TooFewStrongEdges { have: self.strong_edges.len(), need: 2 * f + 1 });
        }
        if self.weak_edges.iter().any(|e| e.round == 0 || e.round + 1 >= self.round || e.source >= n) {
            return Err(VertexError::BadWeakEdge);
        }
        if self.needs_no_vote_proof(n) {
            let mut nv_sources = BTreeSet::new();
            let well_formed = self.nv_edges.iter().all(|e| {
                e.round == self.round && e.source < n && e.source != self.source && nv_sources.insert(e.source)
            });
            if !well_formed || self.nv_edges.len() < 2 * f {
                return Err(VertexError::BadNoVoteEdges);
            }
        } else if !self.nv_edges.is_empty() {
            return Err(VertexError::UnexpectedNoVoteEdges);
        }
        Ok(())
    }
}
