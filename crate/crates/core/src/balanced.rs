//! Erasure-coded optimistic reliable broadcast for long payloads.
//!
//! In balanced mode the broadcaster sends party `j` only fragment `j`; every
//! echo and vote carries one Merkle-authenticated fragment and readies carry
//! only the root. In unbalanced mode the proposal carries the whole payload
//! and each receiver derives its own fragment.

use std::collections::{BTreeMap, BTreeSet};

use bytes::Bytes;
use thiserror::Error;

use crate::coding::{self, decode, CodedFragment, Committed};
use crate::quorum::{rbc_thresholds, SystemParams, ThresholdSet};
use crate::types::{Delivery, Digest, InstanceId, LatencyClass, PartyId, Step, ViolationKind};

/// Maximum candidate roots tracked per instance.
pub const MAX_ROOTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BalanceMode {
    #[default]
    Balanced,
    Unbalanced,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BalancedKind {
    Propose(CodedFragment),
    ProposeFull { payload: Bytes, root: Digest },
    Echo(CodedFragment),
    Vote(CodedFragment),
    Ready(Digest),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BalancedMessage {
    pub instance: InstanceId,
    pub kind: BalancedKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BalancedError {
    #[error("party {me} is not the broadcaster of instance {instance}")]
    NotBroadcaster { me: PartyId, instance: InstanceId },
    #[error("instance {0} was already broadcast")]
    AlreadyBroadcast(InstanceId),
    #[error(transparent)]
    Coding(#[from] coding::CodingError),
}

pub type BalancedStep = Step<BalancedMessage>;

#[derive(Debug, Clone, Default, Hash)]
struct RootState {
    echoes: BTreeMap<PartyId, CodedFragment>,
    votes: BTreeMap<PartyId, CodedFragment>,
    readies: BTreeSet<PartyId>,
    // `Some(None)` records a failed interpolation; the outcome depends only on h.
    interpolated: Option<Option<Committed>>,
    voted: bool,
}

impl RootState {
    fn non_broadcaster_echoes(&self, broadcaster: PartyId) -> usize {
        self.echoes.len() - usize::from(self.echoes.contains_key(&broadcaster))
    }
}

#[derive(Debug, Clone, Hash)]
pub struct BalancedRbcInstance {
    params: SystemParams,
    thresholds: ThresholdSet,
    mode: BalanceMode,
    me: PartyId,
    instance: InstanceId,
    roots: BTreeMap<Digest, RootState>,
    broadcast: bool,
    echoed: bool,
    readied: bool,
    delivered: Option<Delivery>,
}

impl BalancedRbcInstance {
    pub fn new(params: SystemParams, me: PartyId, instance: InstanceId, mode: BalanceMode) -> Self {
        BalancedRbcInstance {
            params,
            thresholds: rbc_thresholds(params),
            mode,
            me,
            instance,
            roots: BTreeMap::new(),
            broadcast: false,
            echoed: false,
            readied: false,
            delivered: None,
        }
    }

    pub fn delivered(&self) -> Option<&Delivery> {
        self.delivered.as_ref()
    }

    pub fn thresholds(&self) -> &ThresholdSet {
        &self.thresholds
    }

    /// Number of candidate roots currently tracked.
    pub fn tracked_roots(&self) -> usize {
        self.roots.len()
    }

    pub fn broadcast(&mut self, m: &[u8]) -> Result<Vec<(PartyId, BalancedMessage)>, BalancedError> {
        if self.me != self.instance.broadcaster {
            return Err(BalancedError::NotBroadcaster { me: self.me, instance: self.instance });
        }
        if self.broadcast {
            return Err(BalancedError::AlreadyBroadcast(self.instance));
        }
        let n = self.params.n();
        let committed = coding::commit(m, n, self.thresholds.decode_k)?;
        self.broadcast = true;
        let instance = self.instance;
        Ok(match self.mode {
            BalanceMode::Balanced => committed
                .fragments()
                .into_iter()
                .enumerate()
                .map(|(j, frag)| (j, BalancedMessage { instance, kind: BalancedKind::Propose(frag) }))
                .collect(),
            BalanceMode::Unbalanced => {
                let payload = Bytes::copy_from_slice(m);
                let root = committed.root();
                (0..n)
                    .map(|j| {
                        let kind = BalancedKind::ProposeFull { payload: payload.clone(), root };
                        (j, BalancedMessage { instance, kind })
                    })
                    .collect()
            }
        })
    }

    pub fn handle(&mut self, from: PartyId, msg: BalancedMessage) -> BalancedStep {
        let n = self.params.n();
        if msg.instance != self.instance || from >= n {
            return Step::violation(from, ViolationKind::UnexpectedMessage);
        }
        if self.delivered.is_some() {
            return Step::default();
        }
        let from_broadcaster = from == self.instance.broadcaster;
        match msg.kind {
            BalancedKind::Propose(frag) => {
                if !from_broadcaster {
                    return Step::violation(from, ViolationKind::ProposeFromNonBroadcaster);
                }
                if self.echoed {
                    return Step::default();
                }
                if frag.index != self.me {
                    return Step::violation(from, ViolationKind::WrongFragmentIndex);
                }
                if !frag.verify(n) {
                    return Step::violation(from, ViolationKind::InvalidProof);
                }
                self.echoed = true;
                self.echo(frag)
            }
            BalancedKind::ProposeFull { payload, root } => {
                if !from_broadcaster {
                    return Step::violation(from, ViolationKind::ProposeFromNonBroadcaster);
                }
                if self.echoed {
                    return Step::default();
                }
                let Ok(committed) = coding::commit(&payload, n, self.thresholds.decode_k) else {
                    return Step::violation(from, ViolationKind::MalformedPayload);
                };
                if committed.root() != root {
                    return Step::violation(from, ViolationKind::MalformedPayload);
                }
                self.echoed = true;
                self.echo(committed.fragment(self.me))
            }
            BalancedKind::Echo(frag) => {
                if frag.index != from {
                    return Step::violation(from, ViolationKind::WrongFragmentIndex);
                }
                if !frag.verify(n) {
                    return Step::violation(from, ViolationKind::InvalidProof);
                }
                let root = frag.root;
                let Some(state) = self.root_state(root) else {
                    return Step::violation(from, ViolationKind::RootLimitExceeded);
                };
                if state.echoes.contains_key(&from) {
                    return Step::default();
                }
                state.echoes.insert(from, frag);
                self.progress(root)
            }
            BalancedKind::Vote(frag) => {
                if from_broadcaster {
                    return Step::default();
                }
                if frag.index != self.me {
                    return Step::violation(from, ViolationKind::WrongFragmentIndex);
                }
                if !frag.verify(n) {
                    return Step::violation(from, ViolationKind::InvalidProof);
                }
                let root = frag.root;
                let Some(state) = self.root_state(root) else {
                    return Step::violation(from, ViolationKind::RootLimitExceeded);
                };
                if state.votes.contains_key(&from) {
                    return Step::default();
                }
                state.votes.insert(from, frag);
                self.progress(root)
            }
            BalancedKind::Ready(root) => {
                let Some(state) = self.root_state(root) else {
                    return Step::violation(from, ViolationKind::RootLimitExceeded);
                };
                if !state.readies.insert(from) {
                    return Step::default();
                }
                self.progress(root)
            }
        }
    }

    fn echo(&self, frag: CodedFragment) -> BalancedStep {
        let instance = self.instance;
        let mut step = Step::default();
        step.messages = (0..self.params.n())
            .map(|j| (j, BalancedMessage { instance, kind: BalancedKind::Echo(frag.clone()) }))
            .collect();
        step
    }

    fn root_state(&mut self, root: Digest) -> Option<&mut RootState> {
        if !self.roots.contains_key(&root) && self.roots.len() >= MAX_ROOTS {
            return None;
        }
        Some(self.roots.entry(root).or_default())
    }

    // Interpolates once enough non-broadcaster echoes exist, caching the outcome.
    fn interpolate_if_ready(&mut self, root: Digest) {
        let (n, k, b) = (self.params.n(), self.thresholds.decode_k, self.instance.broadcaster);
        let vote_at = self.thresholds.vote;
        let Some(state) = self.roots.get_mut(&root) else { return };
        if state.interpolated.is_none() && state.non_broadcaster_echoes(b) >= vote_at {
            let frags: Vec<CodedFragment> = state.echoes.values().cloned().collect();
            let result = coding::verify_interpolation(&frags, &root, n, k).ok().flatten();
            state.interpolated = Some(result);
        }
    }

    fn progress(&mut self, root: Digest) -> BalancedStep {
        let t = self.thresholds;
        let (n, b, instance) = (self.params.n(), self.instance.broadcaster, self.instance);
        self.interpolate_if_ready(root);
        let mut step = Step::default();
        let state = self.roots.get_mut(&root).expect("root tracked");
        let echoes = state.non_broadcaster_echoes(b);
        let votes = state.votes.len();
        let readies = state.readies.len();
        let interpolated = state.interpolated.as_ref().and_then(Option::as_ref);

        if let Some(m) = interpolated {
            if !state.voted && echoes >= t.vote {
                state.voted = true;
                step.messages.extend((0..n).map(|j| {
                    (j, BalancedMessage { instance, kind: BalancedKind::Vote(m.fragment(j)) })
                }));
            }
        }
        let ready_by_echo = interpolated.is_some() && echoes >= t.ready_from_echo;
        if !self.readied && (ready_by_echo || votes >= t.ready_from_vote || readies >= t.ready_amplify) {
            self.readied = true;
            step.messages.extend(
                (0..n).map(|j| (j, BalancedMessage { instance, kind: BalancedKind::Ready(root) })),
            );
        }

        let commit = if let Some(m) = interpolated.filter(|_| echoes >= t.opt_commit) {
            m.vector.message().ok().map(|p| (p, LatencyClass::Opt2))
        } else if readies >= t.commit && state.echoes.len() >= t.decode_k {
            let raw: Vec<(usize, &[u8])> =
                state.echoes.values().map(|f| (f.index, &f.share[..])).collect();
            decode(&raw, n, t.decode_k).ok().map(|p| (p, LatencyClass::Std3or4))
        } else {
            None
        };
        if let Some((payload, class)) = commit {
            self.deliver(&mut step, payload, class);
        }
        step
    }

    fn deliver(&mut self, step: &mut BalancedStep, payload: Vec<u8>, class: LatencyClass) {
        let d = Delivery { payload: Bytes::from(payload), class };
        self.delivered = Some(d.clone());
        step.output = Some(d);
        self.roots.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::CodewordVector;

    fn params() -> SystemParams {
        SystemParams::new(4, 1).unwrap()
    }

    fn id() -> InstanceId {
        InstanceId::new(0, 0)
    }

    fn run_honest(mode: BalanceMode, payload: &[u8]) -> Vec<Option<Delivery>> {
        let p = params();
        let mut parties: Vec<_> = (0..4).map(|i| BalancedRbcInstance::new(p, i, id(), mode)).collect();
        let mut queue: std::collections::VecDeque<(PartyId, PartyId, BalancedMessage)> =
            parties[0].broadcast(payload).unwrap().into_iter().map(|(to, m)| (0, to, m)).collect();
        while let Some((from, to, m)) = queue.pop_front() {
            let step = parties[to].handle(from, m);
            assert!(step.violations.is_empty(), "{:?}", step.violations);
            queue.extend(step.messages.into_iter().map(|(dst, m)| (to, dst, m)));
        }
        parties.iter().map(|p| p.delivered().cloned()).collect()
    }

    #[test]
    fn propose_fragments_are_per_recipient() {
        let mut b = BalancedRbcInstance::new(params(), 0, id(), BalanceMode::Balanced);
        let out = b.broadcast(b"payload").unwrap();
        for (j, (to, m)) in out.iter().enumerate() {
            assert_eq!(*to, j);
            match &m.kind {
                BalancedKind::Propose(f) => assert_eq!(f.index, j),
                other => panic!("unexpected {other:?}"),
            }
        }
        assert!(matches!(b.broadcast(b"x"), Err(BalancedError::AlreadyBroadcast(_))));
    }

    #[test]
    fn honest_run_delivers_everywhere() {
        for mode in [BalanceMode::Balanced, BalanceMode::Unbalanced] {
            for d in run_honest(mode, b"a longer payload for the coded broadcast") {
                assert_eq!(&d.unwrap().payload[..], b"a longer payload for the coded broadcast");
            }
        }
    }

    #[test]
    fn non_codeword_commitment_blocks_vote_and_ready() {
        let p = params();
        let good = coding::encode(b"hello", 4, 2).unwrap();
        let mut shares = good.shares().to_vec();
        shares[3][0] ^= 1;
        let bad = Committed::new(CodewordVector::from_shares_unchecked(2, shares));
        let mut party = BalancedRbcInstance::new(p, 1, id(), BalanceMode::Balanced);
        let propose = BalancedMessage { instance: id(), kind: BalancedKind::Propose(bad.fragment(1)) };
        party.handle(0, propose);
        for j in [1, 2, 3] {
            let echo = BalancedMessage { instance: id(), kind: BalancedKind::Echo(bad.fragment(j)) };
            let step = party.handle(j, echo);
            assert!(step.messages.is_empty() && step.output.is_none());
        }
    }

    #[test]
    fn echo_with_foreign_index_is_rejected() {
        let c = coding::commit(b"x", 4, 2).unwrap();
        let mut party = BalancedRbcInstance::new(params(), 1, id(), BalanceMode::Balanced);
        let step = party.handle(2, BalancedMessage { instance: id(), kind: BalancedKind::Echo(c.fragment(3)) });
        assert_eq!(step.violations[0].kind, ViolationKind::WrongFragmentIndex);
        let mut bad = c.fragment(2);
        bad.share = Bytes::from_static(b"zzzz");
        let step = party.handle(2, BalancedMessage { instance: id(), kind: BalancedKind::Echo(bad) });
        assert_eq!(step.violations[0].kind, ViolationKind::InvalidProof);
    }

    #[test]
    fn ready_path_waits_for_decodable_echoes() {
        let c = coding::commit(b"late", 4, 2).unwrap();
        let root = c.root();
        let mut party = BalancedRbcInstance::new(params(), 3, id(), BalanceMode::Balanced);
        for from in [0, 1, 2] {
            party.handle(from, BalancedMessage { instance: id(), kind: BalancedKind::Ready(root) });
        }
        assert!(party.delivered().is_none());
        party.handle(1, BalancedMessage { instance: id(), kind: BalancedKind::Echo(c.fragment(1)) });
        assert!(party.delivered().is_none());
        let step =
            party.handle(0, BalancedMessage { instance: id(), kind: BalancedKind::Echo(c.fragment(0)) });
        let d = step.output.unwrap();
        assert_eq!((&d.payload[..], d.class), (&b"late"[..], LatencyClass::Std3or4));
    }

    #[test]
    fn root_count_is_bounded() {
        let mut party = BalancedRbcInstance::new(params(), 1, id(), BalanceMode::Balanced);
        for i in 0..MAX_ROOTS as u8 {
            let s = party.handle(2, BalancedMessage { instance: id(), kind: BalancedKind::Ready(Digest([i; 32])) });
            assert!(s.violations.is_empty());
        }
        let s = party.handle(2, BalancedMessage { instance: id(), kind: BalancedKind::Ready(Digest([99; 32])) });
        assert_eq!(s.violations[0].kind, ViolationKind::RootLimitExceeded);
        assert_eq!(party.tracked_roots(), MAX_ROOTS);
    }
}
