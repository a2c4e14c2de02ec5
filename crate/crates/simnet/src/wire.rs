//! Binary wire format used for byte accounting.
//!
//! Every frame is a little-endian `u32` body length followed by the body,
//! whose first byte is the message tag:
//!
//! | tag  | message                    | fields after the tag                              |
//! |------|----------------------------|---------------------------------------------------|
//! | 0x01 | rbc propose                | instance, payload                                 |
//! | 0x02 | rbc echo                   | instance, payload                                 |
//! | 0x03 | rbc vote                   | instance, payload                                 |
//! | 0x04 | rbc ready                  | instance, payload                                 |
//! | 0x11 | balanced propose           | instance, fragment                                |
//! | 0x12 | balanced propose, full     | instance, payload, root                           |
//! | 0x13 | balanced echo              | instance, fragment                                |
//! | 0x14 | balanced vote              | instance, fragment                                |
//! | 0x15 | balanced ready             | instance, root                                    |
//! | 0x21 | avid disperse              | dispersal, fragment                               |
//! | 0x22 | avid echo                  | dispersal, fragment                               |
//! | 0x23 | avid vote                  | dispersal, fragment                               |
//! | 0x24 | avid ready                 | dispersal, root                                   |
//! | 0x25 | avid echo, root only       | dispersal, root                                   |
//! | 0x26 | avid vote, root only       | dispersal, root                                   |
//! | 0x27 | avid retrieve              | dispersal, root                                   |
//! | 0x28 | avid symbol                | dispersal, fragment                               |
//! | 0x31 | dag timeout                | round `u64`                                       |
//!
//! `instance` is broadcaster `u16` then sequence `u64`; `dispersal` is `u64`;
//! `payload` is a `u32` length then bytes; `root` is 32 bytes. A `fragment`
//! is index `u16`, share as a payload, root, Merkle leaf count `u16`, sibling
//! count `u8` and the siblings.

use bytes::{Buf, BufMut, Bytes, BytesMut};
use optbft_core::avid::{AvidKind, AvidMessage};
use optbft_core::balanced::{BalancedKind, BalancedMessage};
use optbft_core::coding::{CodedFragment, MerkleProof};
use optbft_core::rbc::{RbcKind, RbcMessage};
use optbft_core::sailfish::Round;
use optbft_core::{Digest, InstanceId, PartyId};
use thiserror::Error;

/// Every message the simulator carries.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Msg {
    Rbc(RbcMessage),
    Balanced(BalancedMessage),
    Avid(AvidMessage),
    Timeout(Round),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("frame truncated")]
    Truncated,
    #[error("frame length {declared} does not match body length {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("unknown tag {0:#04x}")]
    UnknownTag(u8),
    #[error("trailing bytes in frame")]
    TrailingBytes,
}

impl Msg {
    pub fn tag(&self) -> u8 {
        match self {
            Msg::Rbc(m) => match m.kind {
                RbcKind::Propose => 0x01,
                RbcKind::Echo => 0x02,
                RbcKind::Vote => 0x03,
                RbcKind::Ready => 0x04,
            },
            Msg::Balanced(m) => match m.kind {
                BalancedKind::Propose(_) => 0x11,
                BalancedKind::ProposeFull { .. } => 0x12,
                BalancedKind::Echo(_) => 0x13,
                BalancedKind::Vote(_) => 0x14,
                BalancedKind::Ready(_) => 0x15,
            },
            Msg::Avid(m) => match m.kind {
                AvidKind::Disperse(_) => 0x21,
                AvidKind::Echo(_) => 0x22,
                AvidKind::Vote(_) => 0x23,
                AvidKind::Ready(_) => 0x24,
                AvidKind::EchoRoot(_) => 0x25,
                AvidKind::VoteRoot(_) => 0x26,
                AvidKind::Retrieve(_) => 0x27,
                AvidKind::Symbol(_) => 0x28,
            },
            Msg::Timeout(_) => 0x31,
        }
    }

    /// Short lowercase name for per-kind counters.
    pub fn kind_name(&self) -> &'static str {
        match self.tag() {
            0x01 => "rbc_propose",
            0x02 => "rbc_echo",
            0x03 => "rbc_vote",
            0x04 => "rbc_ready",
            0x11 => "bal_propose",
            0x12 => "bal_propose_full",
            0x13 => "bal_echo",
            0x14 => "bal_vote",
            0x15 => "bal_ready",
            0x21 => "avid_disperse",
            0x22 => "avid_echo",
            0x23 => "avid_vote",
            0x24 => "avid_ready",
            0x25 => "avid_echo_root",
            0x26 => "avid_vote_root",
            0x27 => "avid_retrieve",
            0x28 => "avid_symbol",
            _ => "dag_timeout",
        }
    }

    pub fn encode(&self) -> Bytes {
        let mut body = BytesMut::new();
        body.put_u8(self.tag());
        match self {
            Msg::Rbc(m) => {
                put_instance(&mut body, m.instance);
                put_payload(&mut body, &m.payload);
            }
            Msg::Balanced(m) => {
                put_instance(&mut body, m.instance);
                match &m.kind {
                    BalancedKind::Propose(f) | BalancedKind::Echo(f) | BalancedKind::Vote(f) => {
                        put_fragment(&mut body, f)
                    }
                    BalancedKind::ProposeFull { payload, root } => {
                        put_payload(&mut body, payload);
                        body.put_slice(&root.0);
                    }
                    BalancedKind::Ready(root) => body.put_slice(&root.0),
                }
            }
            Msg::Avid(m) => {
                body.put_u64_le(m.dispersal);
                match &m.kind {
                    AvidKind::Disperse(f) | AvidKind::Echo(f) | AvidKind::Vote(f) | AvidKind::Symbol(f) => {
                        put_fragment(&mut body, f)
                    }
                    AvidKind::Ready(h) | AvidKind::EchoRoot(h) | AvidKind::VoteRoot(h) | AvidKind::Retrieve(h) => {
                        body.put_slice(&h.0)
                    }
                }
            }
            Msg::Timeout(r) => body.put_u64_le(*r),
        }
        let mut frame = BytesMut::with_capacity(4 + body.len());
        frame.put_u32_le(body.len() as u32);
        frame.put_slice(&body);
        frame.freeze()
    }

    pub fn decode(mut frame: &[u8]) -> Result<Msg, WireError> {
        need(frame, 5)?;
        let declared = frame.get_u32_le() as usize;
        if declared != frame.len() {
            return Err(WireError::LengthMismatch { declared, actual: frame.len() });
        }
        let tag = frame.get_u8();
        let b = &mut frame;
        let msg = match tag {
            0x01..=0x04 => {
                let instance = get_instance(b)?;
                let payload = get_payload(b)?;
                let kind = [RbcKind::Propose, RbcKind::Echo, RbcKind::Vote, RbcKind::Ready][tag as usize - 1];
                Msg::Rbc(RbcMessage { instance, kind, payload })
            }
            0x11..=0x15 => {
                let instance = get_instance(b)?;
                let kind = match tag {
                    0x11 => BalancedKind::Propose(get_fragment(b)?),
                    0x12 => BalancedKind::ProposeFull { payload: get_payload(b)?, root: get_digest(b)? },
                    0x13 => BalancedKind::Echo(get_fragment(b)?),
                    0x14 => BalancedKind::Vote(get_fragment(b)?),
                    _ => BalancedKind::Ready(get_digest(b)?),
                };
                Msg::Balanced(BalancedMessage { instance, kind })
            }
            0x21..=0x28 => {
                need(b, 8)?;
                let dispersal = b.get_u64_le();
                let kind = match tag {
                    0x21 => AvidKind::Disperse(get_fragment(b)?),
                    0x22 => AvidKind::Echo(get_fragment(b)?),
                    0x23 => AvidKind::Vote(get_fragment(b)?),
                    0x24 => AvidKind::Ready(get_digest(b)?),
                    0x25 => AvidKind::EchoRoot(get_digest(b)?),
                    0x26 => AvidKind::VoteRoot(get_digest(b)?),
                    0x27 => AvidKind::Retrieve(get_digest(b)?),
                    _ => AvidKind::Symbol(get_fragment(b)?),
                };
                Msg::Avid(AvidMessage { dispersal, kind })
            }
            0x31 => {
                need(b, 8)?;
                Msg::Timeout(b.get_u64_le())
            }
            other => return Err(WireError::UnknownTag(other)),
        };
        if b.has_remaining() {
            return Err(WireError::TrailingBytes);
        }
        Ok(msg)
    }

    /// Encoded frame length, the unit of byte accounting.
    pub fn wire_len(&self) -> usize {
        self.encode().len()
    }
}

fn need(b: &[u8], len: usize) -> Result<(), WireError> {
    if b.len() < len {
        Err(WireError::Truncated)
    } else {
        Ok(())
    }
}

fn put_instance(b: &mut BytesMut, id: InstanceId) {
    b.put_u16_le(id.broadcaster as u16);
    b.put_u64_le(id.seq);
}

fn get_instance(b: &mut &[u8]) -> Result<InstanceId, WireError> {
    need(b, 10)?;
    let broadcaster = b.get_u16_le() as PartyId;
    Ok(InstanceId::new(broadcaster, b.get_u64_le()))
}

fn put_payload(b: &mut BytesMut, p: &[u8]) {
    b.put_u32_le(p.len() as u32);
    b.put_slice(p);
}

fn get_payload(b: &mut &[u8]) -> Result<Bytes, WireError> {
    need(b, 4)?;
    let len = b.get_u32_le() as usize;
    need(b, len)?;
    let p = Bytes::copy_from_slice(&b[..len]);
    b.advance(len);
    Ok(p)
}

fn get_digest(b: &mut &[u8]) -> Result<Digest, WireError> {
    need(b, 32)?;
    let mut d = [0u8; 32];
    b.copy_to_slice(&mut d);
    Ok(Digest(d))
}

fn put_fragment(b: &mut BytesMut, f: &CodedFragment) {
    b.put_u16_le(f.index as u16);
    put_payload(b, &f.share);
    b.put_slice(&f.root.0);
    b.put_u16_le(f.proof.leaf_count as u16);
    b.put_u8(f.proof.siblings.len() as u8);
    for s in &f.proof.siblings {
        b.put_slice(&s.0);
    }
}

fn get_fragment(b: &mut &[u8]) -> Result<CodedFragment, WireError> {
    need(b, 2)?;
    let index = b.get_u16_le() as usize;
    let share = get_payload(b)?;
    let root = get_digest(b)?;
    need(b, 3)?;
    let leaf_count = b.get_u16_le() as usize;
    let count = b.get_u8() as usize;
    let siblings = (0..count).map(|_| get_digest(b)).collect::<Result<_, _>>()?;
    Ok(CodedFragment { index, share, proof: MerkleProof { leaf_count, siblings }, root })
}

#[cfg(test)]
mod tests {
    use optbft_core::coding::commit;

    use super::*;

    fn samples() -> Vec<Msg> {
        let c = commit(b"wire test payload", 7, 3).unwrap();
        let f = c.fragment(2);
        let id = InstanceId::new(3, 9);
        let mut out = vec![Msg::Timeout(42)];
        for kind in [RbcKind::Propose, RbcKind::Echo, RbcKind::Vote, RbcKind::Ready] {
            out.push(Msg::Rbc(RbcMessage { instance: id, kind, payload: Bytes::from_static(b"xyz") }));
        }
        for kind in [
            BalancedKind::Propose(f.clone()),
            BalancedKind::ProposeFull { payload: Bytes::from_static(b"full"), root: c.root() },
            BalancedKind::Echo(f.clone()),
            BalancedKind::Vote(f.clone()),
            BalancedKind::Ready(c.root()),
        ] {
            out.push(Msg::Balanced(BalancedMessage { instance: id, kind }));
        }
        for kind in [
            AvidKind::Disperse(f.clone()),
            AvidKind::Echo(f.clone()),
            AvidKind::Vote(f.clone()),
            AvidKind::Ready(c.root()),
            AvidKind::EchoRoot(c.root()),
            AvidKind::VoteRoot(c.root()),
            AvidKind::Retrieve(c.root()),
            AvidKind::Symbol(f.clone()),
        ] {
            out.push(Msg::Avid(AvidMessage { dispersal: 5, kind }));
        }
        out
    }

    #[test]
    fn every_message_round_trips() {
        for m in samples() {
            let frame = m.encode();
            assert_eq!(frame[4], m.tag());
            assert_eq!(u32::from_le_bytes(frame[..4].try_into().unwrap()) as usize, frame.len() - 4);
            assert_eq!(Msg::decode(&frame), Ok(m.clone()), "{}", m.kind_name());
            assert!(Msg::decode(&frame[..frame.len() - 1]).is_err());
        }
    }

    #[test]
    fn rbc_frame_layout_is_fixed() {
        let m = Msg::Rbc(RbcMessage {
            instance: InstanceId::new(1, 2),
            kind: RbcKind::Echo,
            payload: Bytes::from_static(b"ab"),
        });
        // 4 length + 1 tag + 10 instance + 4 length + 2 payload.
        assert_eq!(
            m.encode().as_ref(),
            &[17, 0, 0, 0, 0x02, 1, 0, 2, 0, 0, 0, 0, 0, 0, 0, 2, 0, 0, 0, b'a', b'b']
        );
    }

    #[test]
    fn unknown_tag_is_rejected() {
        assert_eq!(Msg::decode(&[1, 0, 0, 0, 0x7f]), Err(WireError::UnknownTag(0x7f)));
    }
}
