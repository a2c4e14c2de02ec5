//! Optimistic reliable broadcast with a two-step echo commit, plus the plain
//! three-step Bracha variant used as a baseline transport.
//!
//! Echo and vote tallies count non-broadcaster senders only; ready tallies
//! count every party. Each sender contributes at most one message of each
//! kind, and tallies are keyed by the payload digest.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use bytes::Bytes;
use thiserror::Error;

use crate::quorum::{rbc_thresholds, SystemParams, ThresholdSet};
use crate::types::{Delivery, Digest, InstanceId, LatencyClass, PartyId, Step, ViolationKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RbcKind {
    Propose,
    Echo,
    Vote,
    Ready,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RbcMessage {
    pub instance: InstanceId,
    pub kind: RbcKind,
    pub payload: Bytes,
}

/// Which commit rules an instance runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum RbcMode {
    /// Echo, vote and ready rules with the two-step echo commit.
    #[default]
    Optimistic,
    /// Echo and ready only; commit on `2f + 1` readies.
    Bracha,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RbcError {
    #[error("party {me} is not the broadcaster of instance {instance}")]
    NotBroadcaster { me: PartyId, instance: InstanceId },
    #[error("instance {0} was already broadcast")]
    AlreadyBroadcast(InstanceId),
}

pub type RbcStep = Step<RbcMessage>;

#[derive(Debug, Clone, Default, Hash)]
struct Tally {
    by_digest: BTreeMap<Digest, BTreeSet<PartyId>>,
    // First message per sender; a sender's later messages of this kind are ignored.
    seen: BTreeSet<PartyId>,
}

impl Tally {
    /// Records `from` for `d` and returns the new count, or `None` when the
    /// sender already contributed.
    fn add(&mut self, from: PartyId, d: Digest) -> Option<usize> {
        if !self.seen.insert(from) {
            return None;
        }
        let set = self.by_digest.entry(d).or_default();
        set.insert(from);
        Some(set.len())
    }

    fn count(&self, d: &Digest) -> usize {
        self.by_digest.get(d).map_or(0, BTreeSet::len)
    }
}

#[derive(Debug, Clone, Hash)]
pub struct RbcInstance {
    params: SystemParams,
    thresholds: ThresholdSet,
    mode: RbcMode,
    me: PartyId,
    instance: InstanceId,
    payloads: BTreeMap<Digest, Bytes>,
    echoes: Tally,
    votes: Tally,
    readies: Tally,
    broadcast: bool,
    echoed: bool,
    voted: bool,
    readied: bool,
    delivered: Option<Delivery>,
}

impl RbcInstance {
    pub fn new(params: SystemParams, me: PartyId, instance: InstanceId, mode: RbcMode) -> Self {
        RbcInstance {
            params,
            thresholds: rbc_thresholds(params),
            mode,
            me,
            instance,
            payloads: BTreeMap::new(),
            echoes: Tally::default(),
            votes: Tally::default(),
            readies: Tally::default(),
            broadcast: false,
            echoed: false,
            voted: false,
            readied: false,
            delivered: None,
        }
    }

    pub fn instance(&self) -> InstanceId {
        self.instance
    }

    pub fn thresholds(&self) -> &ThresholdSet {
        &self.thresholds
    }

    pub fn delivered(&self) -> Option<&Delivery> {
        self.delivered.as_ref()
    }

    pub fn is_terminated(&self) -> bool {
        self.delivered.is_some()
    }

    /// Sends `Propose(m)` to every party, the broadcaster included.
    pub fn broadcast(&mut self, m: Bytes) -> Result<Vec<(PartyId, RbcMessage)>, RbcError> {
        if self.me != self.instance.broadcaster {
            return Err(RbcError::NotBroadcaster { me: self.me, instance: self.instance });
        }
        if self.broadcast {
            return Err(RbcError::AlreadyBroadcast(self.instance));
        }
        self.broadcast = true;
        Ok(self.to_all(RbcKind::Propose, &m))
    }

    pub fn handle(&mut self, from: PartyId, msg: RbcMessage) -> RbcStep {
        if msg.instance != self.instance || from >= self.params.n() {
            return Step::violation(from, ViolationKind::UnexpectedMessage);
        }
        if self.delivered.is_some() {
            return Step::default();
        }
        let d = Digest::of(&msg.payload);
        let from_broadcaster = from == self.instance.broadcaster;
        match msg.kind {
            RbcKind::Propose => {
                if !from_broadcaster {
                    return Step::violation(from, ViolationKind::ProposeFromNonBroadcaster);
                }
                if self.echoed {
                    return Step::default();
                }
                self.echoed = true;
                self.payloads.entry(d).or_insert_with(|| msg.payload.clone());
                let mut step = Step::default();
                step.messages = self.to_all(RbcKind::Echo, &msg.payload);
                step
            }
            RbcKind::Echo => {
                let counted = match self.mode {
                    RbcMode::Optimistic => !from_broadcaster,
                    RbcMode::Bracha => true,
                };
                if counted && self.echoes.add(from, d).is_some() {
                    self.payloads.entry(d).or_insert(msg.payload);
                    self.progress(d)
                } else {
                    Step::default()
                }
            }
            RbcKind::Vote => {
                if self.mode == RbcMode::Optimistic
                    && !from_broadcaster
                    && self.votes.add(from, d).is_some()
                {
                    self.payloads.entry(d).or_insert(msg.payload);
                    self.progress(d)
                } else {
                    Step::default()
                }
            }
            RbcKind::Ready => {
                if self.readies.add(from, d).is_some() {
                    self.payloads.entry(d).or_insert(msg.payload);
                    self.progress(d)
                } else {
                    Step::default()
                }
            }
        }
    }

    // Re-evaluates every rule for payload `d`. Sends precede any delivery.
    fn progress(&mut self, d: Digest) -> RbcStep {
        let t = self.thresholds;
        let payload = self.payloads[&d].clone();
        let echoes = self.echoes.count(&d);
        let readies = self.readies.count(&d);
        let mut step = Step::default();
        match self.mode {
            RbcMode::Optimistic => {
                if !self.voted && echoes >= t.vote {
                    self.voted = true;
                    step.messages.extend(self.to_all(RbcKind::Vote, &payload));
                }
                let votes = self.votes.count(&d);
                if !self.readied
                    && (echoes >= t.ready_from_echo
                        || votes >= t.ready_from_vote
                        || readies >= t.ready_amplify)
                {
                    self.readied = true;
                    step.messages.extend(self.to_all(RbcKind::Ready, &payload));
                }
                if echoes >= t.opt_commit {
                    self.deliver(&mut step, payload, LatencyClass::Opt2);
                } else if readies >= t.commit {
                    self.deliver(&mut step, payload, LatencyClass::Std3or4);
                }
            }
            RbcMode::Bracha => {
                let echo_quorum = (self.params.n() + self.params.f() + 1).div_ceil(2);
                if !self.readied && (echoes >= echo_quorum || readies >= t.ready_amplify) {
                    self.readied = true;
                    step.messages.extend(self.to_all(RbcKind::Ready, &payload));
                }
                if readies >= t.commit {
                    self.deliver(&mut step, payload, LatencyClass::Std3or4);
                }
            }
        }
        step
    }

    fn deliver(&mut self, step: &mut RbcStep, payload: Bytes, class: LatencyClass) {
        let d = Delivery { payload, class };
        self.delivered = Some(d.clone());
        step.output = Some(d);
        // Tallies are no longer needed once terminated.
        self.payloads.clear();
        self.echoes = Tally::default();
        self.votes = Tally::default();
        self.readies = Tally::default();
    }

    fn to_all(&self, kind: RbcKind, payload: &Bytes) -> Vec<(PartyId, RbcMessage)> {
        (0..self.params.n())
            .map(|to| (to, RbcMessage { instance: self.instance, kind, payload: payload.clone() }))
            .collect()
    }
}

/// Default bound on buffered messages per peer for instances not yet open.
pub const DEFAULT_PENDING_CAP: usize = 1024;

/// All RBC instances run by one party.
///
/// Instances with `seq` up to the open horizon are created on first contact.
/// Messages for later sequence numbers are buffered per sender, dropping the
/// oldest once a sender exceeds the cap, and replayed when the horizon moves.
#[derive(Debug, Clone)]
pub struct RbcHub {
    params: SystemParams,
    me: PartyId,
    mode: RbcMode,
    instances: BTreeMap<InstanceId, RbcInstance>,
    open_through: u64,
    pending: BTreeMap<PartyId, VecDeque<RbcMessage>>,
    pending_cap: usize,
    dropped: u64,
}

/// Output of an [`RbcHub`] call: the steps of every instance touched.
#[derive(Debug, Clone, Default)]
pub struct HubStep {
    pub messages: Vec<(PartyId, RbcMessage)>,
    pub deliveries: Vec<(InstanceId, Delivery)>,
    /// Proposals accepted as the first from their broadcaster.
    pub first_proposals: Vec<(InstanceId, Bytes)>,
    pub violations: Vec<crate::types::Violation>,
}

impl RbcHub {
    pub fn new(params: SystemParams, me: PartyId, mode: RbcMode) -> Self {
        RbcHub {
            params,
            me,
            mode,
            instances: BTreeMap::new(),
            open_through: u64::MAX,
            pending: BTreeMap::new(),
            pending_cap: DEFAULT_PENDING_CAP,
            dropped: 0,
        }
    }

    pub fn with_pending_cap(mut self, cap: usize) -> Self {
        self.pending_cap = cap;
        self
    }

    pub fn mode(&self) -> RbcMode {
        self.mode
    }

    pub fn instance(&self, id: &InstanceId) -> Option<&RbcInstance> {
        self.instances.get(id)
    }

    /// Number of buffered messages discarded because a sender hit the cap.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn pending_len(&self) -> usize {
        self.pending.values().map(VecDeque::len).sum()
    }

    /// Moves the open horizon and replays buffered messages that fall under it.
    pub fn open_through(&mut self, seq: u64) -> HubStep {
        self.open_through = seq;
        let mut out = HubStep::default();
        let senders: Vec<PartyId> = self.pending.keys().copied().collect();
        for from in senders {
            let queue = self.pending.remove(&from).unwrap_or_default();
            let (ready, keep): (VecDeque<_>, VecDeque<_>) =
                queue.into_iter().partition(|m| m.instance.seq <= seq);
            if !keep.is_empty() {
                self.pending.insert(from, keep);
            }
            for m in ready {
                self.dispatch(from, m, &mut out);
            }
        }
        out
    }

    pub fn broadcast(&mut self, seq: u64, m: Bytes) -> Result<Vec<(PartyId, RbcMessage)>, RbcError> {
        let id = InstanceId::new(self.me, seq);
        self.entry(id).broadcast(m)
    }

    pub fn handle(&mut self, from: PartyId, msg: RbcMessage) -> HubStep {
        let mut out = HubStep::default();
        if msg.instance.broadcaster >= self.params.n() {
            out.violations.push(crate::types::Violation {
                from,
                kind: ViolationKind::UnexpectedMessage,
            });
            return out;
        }
        if msg.instance.seq > self.open_through {
            let queue = self.pending.entry(from).or_default();
            if queue.len() >= self.pending_cap {
                queue.pop_front();
                self.dropped += 1;
            }
            queue.push_back(msg);
            return out;
        }
        self.dispatch(from, msg, &mut out);
        out
    }

    fn dispatch(&mut self, from: PartyId, msg: RbcMessage, out: &mut HubStep) {
        let id = msg.instance;
        let inst = self.entry(id);
        let first = msg.kind == RbcKind::Propose
            && from == id.broadcaster
            && !inst.echoed
            && !inst.is_terminated();
        let payload = first.then(|| msg.payload.clone());
        let step = inst.handle(from, msg);
        if let Some(p) = payload {
            out.first_proposals.push((id, p));
        }
        out.messages.extend(step.messages);
        out.violations.extend(step.violations);
        if let Some(d) = step.output {
            out.deliveries.push((id, d));
        }
    }

    fn entry(&mut self, id: InstanceId) -> &mut RbcInstance {
        let (params, me, mode) = (self.params, self.me, self.mode);
        self.instances.entry(id).or_insert_with(|| RbcInstance::new(params, me, id, mode))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: usize, f: usize) -> SystemParams {
        SystemParams::new(n, f).unwrap()
    }

    fn msg(kind: RbcKind, p: &'static [u8]) -> RbcMessage {
        RbcMessage { instance: InstanceId::new(0, 0), kind, payload: Bytes::from_static(p) }
    }

    fn instance(me: PartyId) -> RbcInstance {
        RbcInstance::new(params(4, 1), me, InstanceId::new(0, 0), RbcMode::Optimistic)
    }

    #[test]
    fn broadcast_reaches_everyone_once() {
        let mut b = instance(0);
        let out = b.broadcast(Bytes::from_static(b"x")).unwrap();
        assert_eq!(out.iter().map(|(to, _)| *to).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert!(out.iter().all(|(_, m)| m.kind == RbcKind::Propose && &m.payload[..] == b"x"));
        assert_eq!(b.broadcast(Bytes::new()), Err(RbcError::AlreadyBroadcast(InstanceId::new(0, 0))));
        assert!(matches!(instance(1).broadcast(Bytes::new()), Err(RbcError::NotBroadcaster { .. })));
    }

    #[test]
    fn empty_payload_is_opaque() {
        let out = instance(0).broadcast(Bytes::new()).unwrap();
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|(_, m)| m.payload.is_empty()));
    }

    #[test]
    fn propose_triggers_echo() {
        let mut p = instance(1);
        let step = p.handle(0, msg(RbcKind::Propose, b"m"));
        assert_eq!(step.messages.len(), 4);
        assert!(step.messages.iter().all(|(_, m)| m.kind == RbcKind::Echo));
        assert!(step.output.is_none());
    }

    #[test]
    fn second_echo_commits_optimistically_at_n4() {
        let mut p = instance(1);
        assert!(p.handle(2, msg(RbcKind::Echo, b"m")).is_empty());
        let step = p.handle(3, msg(RbcKind::Echo, b"m"));
        let kinds: Vec<_> = step.messages.iter().map(|(_, m)| m.kind).collect();
        assert_eq!(kinds.iter().filter(|k| **k == RbcKind::Vote).count(), 4);
        assert_eq!(kinds.iter().filter(|k| **k == RbcKind::Ready).count(), 4);
        let d = step.output.unwrap();
        assert_eq!((&d.payload[..], d.class), (&b"m"[..], LatencyClass::Opt2));
        assert_eq!(p.delivered(), Some(&d));
        assert!(p.handle(2, msg(RbcKind::Ready, b"m")).is_empty());
    }

    #[test]
    fn broadcaster_echo_is_not_counted() {
        let mut p = instance(1);
        p.handle(0, msg(RbcKind::Echo, b"m"));
        assert!(p.handle(2, msg(RbcKind::Echo, b"m")).output.is_none());
    }

    #[test]
    fn propose_from_non_broadcaster_is_flagged() {
        let mut p = instance(1);
        let step = p.handle(2, msg(RbcKind::Propose, b"m"));
        assert_eq!(step.violations[0].kind, ViolationKind::ProposeFromNonBroadcaster);
        assert!(step.messages.is_empty());
    }

    #[test]
    fn duplicate_senders_are_idempotent() {
        let mut p = RbcInstance::new(params(7, 2), 1, InstanceId::new(0, 0), RbcMode::Optimistic);
        for _ in 0..5 {
            assert!(p.handle(2, msg(RbcKind::Ready, b"m")).is_empty());
        }
        assert_eq!(p.readies.count(&Digest::of(b"m")), 1);
    }

    #[test]
    fn ready_path_delivers_std() {
        let mut p = instance(1);
        let mut outs = Vec::new();
        for from in [0, 2, 3] {
            outs.push(p.handle(from, msg(RbcKind::Ready, b"m")));
        }
        assert!(outs[1].messages.iter().all(|(_, m)| m.kind == RbcKind::Ready));
        assert_eq!(outs[2].output.as_ref().unwrap().class, LatencyClass::Std3or4);
    }

    #[test]
    fn bracha_mode_needs_three_steps() {
        let mut p = RbcInstance::new(params(4, 1), 1, InstanceId::new(0, 0), RbcMode::Bracha);
        p.handle(0, msg(RbcKind::Propose, b"m"));
        for from in 0..3 {
            let s = p.handle(from, msg(RbcKind::Echo, b"m"));
            assert!(s.output.is_none());
        }
        assert!(p.readied);
        let mut last = Step::default();
        for from in 0..3 {
            last = p.handle(from, msg(RbcKind::Ready, b"m"));
        }
        assert_eq!(last.output.unwrap().class, LatencyClass::Std3or4);
    }

    #[test]
    fn hub_buffers_beyond_horizon_and_drops_oldest() {
        let mut hub = RbcHub::new(params(4, 1), 1, RbcMode::Optimistic).with_pending_cap(2);
        hub.open_through(0);
        for seq in 1..=3 {
            let m = RbcMessage {
                instance: InstanceId::new(0, seq),
                kind: RbcKind::Propose,
                payload: Bytes::from_static(b"p"),
            };
            assert!(hub.handle(0, m).messages.is_empty());
        }
        assert_eq!((hub.pending_len(), hub.dropped()), (2, 1));
        let out = hub.open_through(2);
        assert_eq!(out.first_proposals.len(), 1);
        assert_eq!(out.first_proposals[0].0, InstanceId::new(0, 2));
        assert_eq!(hub.pending_len(), 1);
    }

    #[test]
    fn hub_reports_first_proposal_once() {
        let mut hub = RbcHub::new(params(4, 1), 1, RbcMode::Optimistic);
        let m = msg(RbcKind::Propose, b"a");
        assert_eq!(hub.handle(0, m.clone()).first_proposals.len(), 1);
        assert!(hub.handle(0, m).first_proposals.is_empty());
    }
}
