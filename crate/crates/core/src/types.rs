use std::fmt;

use bytes::Bytes;
use sha2::{Digest as _, Sha256};

/// Index of a party in `0..n`.
pub type PartyId = usize;

/// Identifies one broadcast: the designated broadcaster and a sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InstanceId {
    pub broadcaster: PartyId,
    pub seq: u64,
}

impl InstanceId {
    pub fn new(broadcaster: PartyId, seq: u64) -> Self {
        InstanceId { broadcaster, seq }
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.broadcaster, self.seq)
    }
}

/// A 32-byte SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn of(data: &[u8]) -> Self {
        Digest(Sha256::digest(data).into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({self})")
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0[..4] {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// How a reliable-broadcast delivery was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LatencyClass {
    /// Two-step optimistic commit on echoes.
    Opt2,
    /// Commit on `2f + 1` readies (three steps good case, four bad case).
    Std3or4,
}

impl fmt::Display for LatencyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatencyClass::Opt2 => f.write_str("opt2"),
            LatencyClass::Std3or4 => f.write_str("std3or4"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Delivery {
    pub payload: Bytes,
    pub class: LatencyClass,
}

/// Misbehaviour observed while handling a message. The message is dropped.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Violation {
    pub from: PartyId,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationKind {
    ProposeFromNonBroadcaster,
    InvalidProof,
    WrongFragmentIndex,
    RootLimitExceeded,
    MalformedPayload,
    MalformedVertex,
    InvalidVertex,
    UnexpectedMessage,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationKind::ProposeFromNonBroadcaster => "propose_from_non_broadcaster",
            ViolationKind::InvalidProof => "invalid_proof",
            ViolationKind::WrongFragmentIndex => "wrong_fragment_index",
            ViolationKind::RootLimitExceeded => "root_limit_exceeded",
            ViolationKind::MalformedPayload => "malformed_payload",
            ViolationKind::MalformedVertex => "malformed_vertex",
            ViolationKind::InvalidVertex => "invalid_vertex",
            ViolationKind::UnexpectedMessage => "unexpected_message",
        };
        f.write_str(s)
    }
}

/// Result of feeding one input into a broadcast state machine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step<M, O = Delivery> {
    /// Messages to send, addressed by destination.
    pub messages: Vec<(PartyId, M)>,
    pub output: Option<O>,
    pub violations: Vec<Violation>,
}

impl<M, O> Default for Step<M, O> {
    fn default() -> Self {
        Step { messages: Vec::new(), output: None, violations: Vec::new() }
    }
}

impl<M, O> Step<M, O> {
    pub fn is_empty(&self) -> bool {
        self.messages.is_empty() && self.output.is_none() && self.violations.is_empty()
    }

    pub(crate) fn violation(from: PartyId, kind: ViolationKind) -> Self {
        Step { violations: vec![Violation { from, kind }], ..Step::default() }
    }
}
