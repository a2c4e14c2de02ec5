//! Optimistic asynchronous verifiable information dispersal.
//!
//! A client outside the `n` servers disperses a coded payload; each server
//! ends holding its own fragment and the root. Retrieval asks every server
//! for its fragment and decodes from any `decode_k` of them.
//!
//! In [`AvidMode::RootOnly`] echoes, votes and readies carry only the root,
//! there is no interpolation check, and inconsistency is caught at retrieval
//! time instead.

use std::collections::{BTreeMap, BTreeSet};

use bytes::Bytes;
use thiserror::Error;

use crate::coding::{self, decode, CodedFragment, Committed};
use crate::quorum::{avid_thresholds, SystemParams, ThresholdSet};
use crate::types::{Digest, LatencyClass, PartyId, Step, ViolationKind};

/// Maximum candidate roots tracked per dispersal.
pub const MAX_ROOTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum AvidMode {
    #[default]
    Full,
    RootOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AvidKind {
    Disperse(CodedFragment),
    Echo(CodedFragment),
    Vote(CodedFragment),
    Ready(Digest),
    EchoRoot(Digest),
    VoteRoot(Digest),
    Retrieve(Digest),
    Symbol(CodedFragment),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AvidMessage {
    pub dispersal: u64,
    pub kind: AvidKind,
}

/// What a server holds once dispersal completes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DispersalOutput {
    pub root: Digest,
    /// Absent only in root-only mode when the client never sent this server
    /// a valid fragment.
    pub fragment: Option<CodedFragment>,
    pub class: LatencyClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AvidError {
    #[error("dispersal {0} already started")]
    AlreadyDispersing(u64),
    #[error("no retrieval target; disperse or name a root first")]
    NoTarget,
    #[error(transparent)]
    Coding(#[from] coding::CodingError),
}

pub type ServerStep = Step<AvidMessage, DispersalOutput>;
/// Retrieval output: `None` is the ⊥ outcome.
pub type ClientStep = Step<AvidMessage, Option<Bytes>>;

#[derive(Debug, Default)]
struct RootState {
    echoes: BTreeMap<PartyId, Option<CodedFragment>>,
    votes: BTreeMap<PartyId, Option<CodedFragment>>,
    readies: BTreeSet<PartyId>,
    interpolated: Option<Option<Committed>>,
    voted: bool,
}

#[derive(Debug)]
pub struct AvidServer {
    params: SystemParams,
    thresholds: ThresholdSet,
    mode: AvidMode,
    me: PartyId,
    client: PartyId,
    dispersal: u64,
    own: Option<CodedFragment>,
    roots: BTreeMap<Digest, RootState>,
    echoed: bool,
    readied: bool,
    stored: Option<DispersalOutput>,
    pending_retrievals: Vec<Digest>,
}

impl AvidServer {
    /// `client` is the party id the simulator uses for the client endpoint;
    /// it must lie outside `0..n`.
    pub fn new(params: SystemParams, me: PartyId, client: PartyId, dispersal: u64, mode: AvidMode) -> Self {
        assert!(client >= params.n(), "client id must be outside the server range");
        AvidServer {
            params,
            thresholds: avid_thresholds(params),
            mode,
            me,
            client,
            dispersal,
            own: None,
            roots: BTreeMap::new(),
            echoed: false,
            readied: false,
            stored: None,
            pending_retrievals: Vec::new(),
        }
    }

    pub fn stored(&self) -> Option<&DispersalOutput> {
        self.stored.as_ref()
    }

    pub fn thresholds(&self) -> &ThresholdSet {
        &self.thresholds
    }

    pub fn handle(&mut self, from: PartyId, msg: AvidMessage) -> ServerStep {
        let n = self.params.n();
        if msg.dispersal != self.dispersal || (from >= n && from != self.client) {
            return Step::violation(from, ViolationKind::UnexpectedMessage);
        }
        let from_client = from == self.client;
        match msg.kind {
            AvidKind::Retrieve(h) if from_client => self.retrieve(h),
            _ if self.stored.is_some() => Step::default(),
            AvidKind::Disperse(frag) if from_client => self.on_disperse(frag),
            AvidKind::Echo(frag) if !from_client && self.mode == AvidMode::Full => {
                self.on_fragment(from, frag, true)
            }
            AvidKind::Vote(frag) if !from_client && self.mode == AvidMode::Full => {
                self.on_fragment(from, frag, false)
            }
            AvidKind::EchoRoot(h) if !from_client && self.mode == AvidMode::RootOnly => {
                self.on_root(from, h, true)
            }
            AvidKind::VoteRoot(h) if !from_client && self.mode == AvidMode::RootOnly => {
                self.on_root(from, h, false)
            }
            AvidKind::Ready(h) if !from_client => {
                let Some(state) = self.root_state(h) else {
                    return Step::violation(from, ViolationKind::RootLimitExceeded);
                };
                if !state.readies.insert(from) {
                    return Step::default();
                }
                self.progress(h)
            }
            _ => Step::violation(from, ViolationKind::UnexpectedMessage),
        }
    }

    fn retrieve(&mut self, h: Digest) -> ServerStep {
        match &self.stored {
            Some(out) if out.root == h => self.symbol(),
            Some(_) => Step::default(),
            None => {
                if !self.pending_retrievals.contains(&h) {
                    self.pending_retrievals.push(h);
                }
                Step::default()
            }
        }
    }

    fn symbol(&self) -> ServerStep {
        let mut step = Step::default();
        if let Some(frag) = self.stored.as_ref().and_then(|s| s.fragment.clone()) {
            let msg = AvidMessage { dispersal: self.dispersal, kind: AvidKind::Symbol(frag) };
            step.messages.push((self.client, msg));
        }
        step
    }

    fn on_disperse(&mut self, frag: CodedFragment) -> ServerStep {
        if self.echoed {
            return Step::default();
        }
        if frag.index != self.me {
            return Step::violation(self.client, ViolationKind::WrongFragmentIndex);
        }
        if !frag.verify(self.params.n()) {
            return Step::violation(self.client, ViolationKind::InvalidProof);
        }
        self.echoed = true;
        let kind = match self.mode {
            AvidMode::Full => AvidKind::Echo(frag.clone()),
            AvidMode::RootOnly => AvidKind::EchoRoot(frag.root),
        };
        self.own = Some(frag);
        let mut step = Step::default();
        step.messages = self.to_servers(|_| kind.clone());
        step
    }

    fn on_fragment(&mut self, from: PartyId, frag: CodedFragment, echo: bool) -> ServerStep {
        let expected = if echo { from } else { self.me };
        if frag.index != expected {
            return Step::violation(from, ViolationKind::WrongFragmentIndex);
        }
        if !frag.verify(self.params.n()) {
            return Step::violation(from, ViolationKind::InvalidProof);
        }
        let h = frag.root;
        let Some(state) = self.root_state(h) else {
            return Step::violation(from, ViolationKind::RootLimitExceeded);
        };
        let tally = if echo { &mut state.echoes } else { &mut state.votes };
        if tally.contains_key(&from) {
            return Step::default();
        }
        tally.insert(from, Some(frag));
        self.progress(h)
    }

    fn on_root(&mut self, from: PartyId, h: Digest, echo: bool) -> ServerStep {
        let Some(state) = self.root_state(h) else {
            return Step::violation(from, ViolationKind::RootLimitExceeded);
        };
        let tally = if echo { &mut state.echoes } else { &mut state.votes };
        if tally.insert(from, None).is_some() {
            return Step::default();
        }
        self.progress(h)
    }

    fn root_state(&mut self, h: Digest) -> Option<&mut RootState> {
        if !self.roots.contains_key(&h) && self.roots.len() >= MAX_ROOTS {
            return None;
        }
        Some(self.roots.entry(h).or_default())
    }

    fn progress(&mut self, h: Digest) -> ServerStep {
        let t = self.thresholds;
        let (n, k) = (self.params.n(), t.decode_k);
        let full = self.mode == AvidMode::Full;
        let dispersal = self.dispersal;
        let state = self.roots.get_mut(&h).expect("root tracked");
        if full && state.interpolated.is_none() && state.echoes.len() >= t.vote {
            let frags: Vec<CodedFragment> = state.echoes.values().flatten().cloned().collect();
            state.interpolated = Some(coding::verify_interpolation(&frags, &h, n, k).ok().flatten());
        }
        let echoes = state.echoes.len();
        let votes = state.votes.len();
        let readies = state.readies.len();
        let interpolated = state.interpolated.as_ref().and_then(Option::as_ref);
        // Root-only mode skips the codeword check entirely.
        let checked = !full || interpolated.is_some();

        let mut messages = Vec::new();
        if checked && !state.voted && echoes >= t.vote {
            state.voted = true;
            for j in 0..n {
                let kind = match interpolated {
                    Some(m) => AvidKind::Vote(m.fragment(j)),
                    None => AvidKind::VoteRoot(h),
                };
                messages.push((j, AvidMessage { dispersal, kind }));
            }
        }
        if !self.readied
            && ((checked && echoes >= t.ready_from_echo)
                || votes >= t.ready_from_vote
                || readies >= t.ready_amplify)
        {
            self.readied = true;
            messages.extend((0..n).map(|j| (j, AvidMessage { dispersal, kind: AvidKind::Ready(h) })));
        }

        let class = if checked && echoes >= t.opt_commit {
            Some(LatencyClass::Opt2)
        } else if readies >= t.commit {
            Some(LatencyClass::Std3or4)
        } else {
            None
        };
        let fragment = match (class, self.mode) {
            (None, _) => None,
            (Some(LatencyClass::Opt2), AvidMode::Full) => interpolated.map(|m| Some(m.fragment(self.me))),
            (Some(_), AvidMode::RootOnly) => {
                Some(self.own.clone().filter(|f| f.root == h))
            }
            (Some(LatencyClass::Std3or4), AvidMode::Full) => {
                let frags: Vec<CodedFragment> =
                    state.echoes.values().chain(state.votes.values()).flatten().cloned().collect();
                let mut by_index = BTreeMap::new();
                for f in frags {
                    by_index.entry(f.index).or_insert(f);
                }
                // Echo and vote fragments are both bound to h; either may fill the decode set.
                if by_index.len() >= k {
                    let frags: Vec<CodedFragment> = by_index.into_values().collect();
                    coding::verify_interpolation(&frags, &h, n, k)
                        .ok()
                        .flatten()
                        .map(|m| Some(m.fragment(self.me)))
                } else {
                    None
                }
            }
        };

        let mut step = Step { messages, ..Step::default() };
        if let (Some(class), Some(fragment)) = (class, fragment) {
            self.stored = Some(DispersalOutput { root: h, fragment, class });
            step.output = self.stored.clone();
            self.roots.clear();
            if self.pending_retrievals.contains(&h) {
                step.messages.extend(self.symbol().messages);
            }
            self.pending_retrievals.clear();
        }
        step
    }

    fn to_servers(&self, kind: impl Fn(PartyId) -> AvidKind) -> Vec<(PartyId, AvidMessage)> {
        (0..self.params.n()).map(|j| (j, AvidMessage { dispersal: self.dispersal, kind: kind(j) })).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClientPhase {
    Idle,
    Dispersing,
    Retrieving,
    Done,
}

#[derive(Debug)]
pub struct AvidClient {
    params: SystemParams,
    mode: AvidMode,
    dispersal: u64,
    phase: ClientPhase,
    target: Option<Digest>,
    symbols: BTreeMap<usize, CodedFragment>,
    output: Option<Option<Bytes>>,
}

impl AvidClient {
    pub fn new(params: SystemParams, dispersal: u64, mode: AvidMode) -> Self {
        AvidClient {
            params,
            mode,
            dispersal,
            phase: ClientPhase::Idle,
            target: None,
            symbols: BTreeMap::new(),
            output: None,
        }
    }

    pub fn phase(&self) -> ClientPhase {
        self.phase
    }

    pub fn target(&self) -> Option<Digest> {
        self.target
    }

    /// `Some(None)` means retrieval finished with ⊥.
    pub fn output(&self) -> Option<&Option<Bytes>> {
        self.output.as_ref()
    }

    pub fn disperse(&mut self, m: &[u8]) -> Result<Vec<(PartyId, AvidMessage)>, AvidError> {
        let k = avid_thresholds(self.params).decode_k;
        let committed = coding::commit(m, self.params.n(), k)?;
        self.disperse_committed(&committed)
    }

    /// Disperses an already committed vector, which need not be a codeword.
    pub fn disperse_committed(
        &mut self,
        committed: &Committed,
    ) -> Result<Vec<(PartyId, AvidMessage)>, AvidError> {
        if self.phase != ClientPhase::Idle {
            return Err(AvidError::AlreadyDispersing(self.dispersal));
        }
        self.phase = ClientPhase::Dispersing;
        self.target = Some(committed.root());
        let dispersal = self.dispersal;
        Ok(committed
            .fragments()
            .into_iter()
            .enumerate()
            .map(|(j, f)| (j, AvidMessage { dispersal, kind: AvidKind::Disperse(f) }))
            .collect())
    }

    /// Asks every server for its fragment of `h`, or of the dispersed root.
    pub fn retrieve(&mut self, h: Option<Digest>) -> Result<Vec<(PartyId, AvidMessage)>, AvidError> {
        let h = h.or(self.target).ok_or(AvidError::NoTarget)?;
        self.target = Some(h);
        self.phase = ClientPhase::Retrieving;
        self.symbols.clear();
        self.output = None;
        let dispersal = self.dispersal;
        Ok((0..self.params.n())
            .map(|j| (j, AvidMessage { dispersal, kind: AvidKind::Retrieve(h) }))
            .collect())
    }

    pub fn handle(&mut self, from: PartyId, msg: AvidMessage) -> ClientStep {
        let n = self.params.n();
        if msg.dispersal != self.dispersal || from >= n {
            return Step::violation(from, ViolationKind::UnexpectedMessage);
        }
        let AvidKind::Symbol(frag) = msg.kind else {
            return Step::violation(from, ViolationKind::UnexpectedMessage);
        };
        if self.phase != ClientPhase::Retrieving || Some(frag.root) != self.target {
            return Step::default();
        }
        if frag.index != from {
            return Step::violation(from, ViolationKind::WrongFragmentIndex);
        }
        if !frag.verify(n) {
            return Step::violation(from, ViolationKind::InvalidProof);
        }
        self.symbols.entry(from).or_insert(frag);
        let k = avid_thresholds(self.params).decode_k;
        if self.symbols.len() < k {
            return Step::default();
        }
        let frags: Vec<CodedFragment> = self.symbols.values().cloned().collect();
        let h = self.target.expect("retrieving");
        let out = match self.mode {
            AvidMode::Full => {
                let raw: Vec<(usize, &[u8])> = frags.iter().map(|f| (f.index, &f.share[..])).collect();
                decode(&raw, n, k).ok().map(Bytes::from)
            }
            AvidMode::RootOnly => coding::verify_interpolation(&frags, &h, n, k)
                .ok()
                .flatten()
                .and_then(|m| m.vector.message().ok())
                .map(Bytes::from),
        };
        self.phase = ClientPhase::Done;
        self.output = Some(out.clone());
        Step { output: Some(out), ..Step::default() }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::VecDeque;

    use super::*;
    use crate::coding::CodewordVector;

    const CLIENT: PartyId = 100;

    struct World {
        servers: Vec<AvidServer>,
        client: AvidClient,
        silent: BTreeSet<PartyId>,
        queue: VecDeque<(PartyId, PartyId, AvidMessage)>,
    }

    impl World {
        fn new(n: usize, f: usize, mode: AvidMode, silent: &[PartyId]) -> Self {
            let p = SystemParams::new(n, f).unwrap();
            World {
                servers: (0..n).map(|i| AvidServer::new(p, i, CLIENT, 0, mode)).collect(),
                client: AvidClient::new(p, 0, mode),
                silent: silent.iter().copied().collect(),
                queue: VecDeque::new(),
            }
        }

        fn send(&mut self, from: PartyId, msgs: Vec<(PartyId, AvidMessage)>) {
            self.queue.extend(msgs.into_iter().map(|(to, m)| (from, to, m)));
        }

        fn run(&mut self) {
            while let Some((from, to, m)) = self.queue.pop_front() {
                if to == CLIENT {
                    self.client.handle(from, m);
                } else if !self.silent.contains(&to) {
                    let step = self.servers[to].handle(from, m);
                    self.send(to, step.messages);
                }
            }
        }
    }

    #[test]
    fn honest_dispersal_and_retrieval() {
        let mut w = World::new(7, 2, AvidMode::Full, &[]);
        let out = w.client.disperse(b"hello").unwrap();
        w.send(CLIENT, out);
        w.run();
        assert!(w.servers.iter().all(|s| s.stored().unwrap().class == LatencyClass::Opt2));
        let req = w.client.retrieve(None).unwrap();
        w.send(CLIENT, req);
        w.run();
        assert_eq!(w.client.output(), Some(&Some(Bytes::from_static(b"hello"))));
    }

    #[test]
    fn empty_payload_round_trips() {
        let mut w = World::new(4, 1, AvidMode::Full, &[]);
        let out = w.client.disperse(b"").unwrap();
        w.send(CLIENT, out);
        w.run();
        let req = w.client.retrieve(None).unwrap();
        w.send(CLIENT, req);
        w.run();
        assert_eq!(w.client.output(), Some(&Some(Bytes::new())));
    }

    #[test]
    fn two_silent_servers_force_ready_path() {
        let mut w = World::new(7, 2, AvidMode::Full, &[5, 6]);
        let out = w.client.disperse(b"payload").unwrap();
        w.send(CLIENT, out);
        w.run();
        for s in &w.servers[..5] {
            assert_eq!(s.stored().unwrap().class, LatencyClass::Std3or4);
        }
    }

    #[test]
    fn repeat_dispersal_is_rejected() {
        let mut w = World::new(4, 1, AvidMode::Full, &[]);
        w.client.disperse(b"a").unwrap();
        assert_eq!(w.client.disperse(b"a"), Err(AvidError::AlreadyDispersing(0)));
    }

    fn tampered(n: usize, k: usize) -> Committed {
        let good = coding::encode(b"inconsistent", n, k).unwrap();
        let mut shares = good.shares().to_vec();
        shares[n - 1][0] ^= 0x55;
        Committed::new(CodewordVector::from_shares_unchecked(k, shares))
    }

    #[test]
    fn non_codeword_blocks_full_mode() {
        let mut w = World::new(7, 2, AvidMode::Full, &[]);
        let out = w.client.disperse_committed(&tampered(7, 3)).unwrap();
        w.send(CLIENT, out);
        w.run();
        assert!(w.servers.iter().all(|s| s.stored().is_none()));
    }

    #[test]
    fn root_only_inconsistent_dispersal_retrieves_bottom() {
        let mut w = World::new(7, 2, AvidMode::RootOnly, &[]);
        let out = w.client.disperse_committed(&tampered(7, 3)).unwrap();
        w.send(CLIENT, out);
        w.run();
        assert!(w.servers.iter().all(|s| s.stored().is_some()));
        let req = w.client.retrieve(None).unwrap();
        w.send(CLIENT, req);
        w.run();
        assert_eq!(w.client.output(), Some(&None));
    }

    #[test]
    fn retrieval_waits_for_completion() {
        let p = SystemParams::new(4, 1).unwrap();
        let mut s = AvidServer::new(p, 0, CLIENT, 0, AvidMode::Full);
        let c = coding::commit(b"x", 4, 2).unwrap();
        let req = AvidMessage { dispersal: 0, kind: AvidKind::Retrieve(c.root()) };
        assert!(s.handle(CLIENT, req).messages.is_empty());
        s.handle(CLIENT, AvidMessage { dispersal: 0, kind: AvidKind::Disperse(c.fragment(0)) });
        let mut last = Step::default();
        for j in 0..4 {
            last = s.handle(j, AvidMessage { dispersal: 0, kind: AvidKind::Echo(c.fragment(j)) });
        }
        assert!(last.output.is_some());
        assert!(last.messages.iter().any(|(to, m)| *to == CLIENT && matches!(m.kind, AvidKind::Symbol(_))));
    }

    #[test]
    fn too_few_symbols_do_not_complete() {
        let p = SystemParams::new(7, 2).unwrap();
        let c = coding::commit(b"x", 7, 3).unwrap();
        let mut client = AvidClient::new(p, 0, AvidMode::Full);
        client.retrieve(Some(c.root())).unwrap();
        for j in 0..2 {
            client.handle(j, AvidMessage { dispersal: 0, kind: AvidKind::Symbol(c.fragment(j)) });
        }
        assert_eq!(client.output(), None);
    }
}
