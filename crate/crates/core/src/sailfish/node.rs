use std::collections::{BTreeMap, BTreeSet, VecDeque};

use bytes::Bytes;

use super::dag::Dag;
use super::transport::{TransportOutput, VertexTransport};
use super::vertex::{leader, Round, Vertex, VertexRef};
use crate::quorum::SystemParams;
use crate::types::{Digest, InstanceId, PartyId, Violation, ViolationKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SailfishConfig {
    /// Known bound on post-GST message delay, in microseconds.
    pub delta_bound_us: u64,
    /// No vertex is created above this round.
    pub max_round: Round,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SailfishMessage<M> {
    Rbc(M),
    Timeout(Round),
}

/// Ask the caller to invoke [`SailfishNode::on_timer`] after `after_us`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimerRequest {
    pub round: Round,
    pub after_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeEvent {
    RoundEntered { round: Round, via_leader: bool, jumped_from: Round },
    VertexBroadcast(VertexRef),
    VertexAdded(VertexRef),
    /// `direct` is false for leaders committed by walking back from a later one.
    LeaderCommitted { leader: VertexRef, direct: bool },
    Delivered { vertex: VertexRef, block: Bytes },
    TimeoutSent { round: Round, amplified: bool },
    Violation(Violation),
}

#[derive(Debug, Clone)]
pub struct NodeOutput<M> {
    pub messages: Vec<(PartyId, SailfishMessage<M>)>,
    pub timer: Option<TimerRequest>,
    pub events: Vec<NodeEvent>,
}

impl<M> Default for NodeOutput<M> {
    fn default() -> Self {
        NodeOutput { messages: Vec::new(), timer: None, events: Vec::new() }
    }
}

/// One party running DAG construction, the two commit rules and ordering on
/// top of a reliable-broadcast transport.
///
/// Inputs are [`start`](Self::start), [`handle`](Self::handle),
/// [`on_timer`](Self::on_timer) and [`settle`](Self::settle). The caller runs
/// `settle` once all inputs carrying the same timestamp have been handled;
/// round advancement is only evaluated there, so a batch of simultaneous
/// deliveries is seen as a whole.
#[derive(Debug)]
pub struct SailfishNode<T: VertexTransport> {
    params: SystemParams,
    me: PartyId,
    config: SailfishConfig,
    transport: T,
    round: Round,
    dag: Dag,
    /// Delivered vertices whose history is not yet in the DAG.
    buffer: BTreeMap<VertexRef, Vertex>,
    /// Leader vertices waiting for their no-vote targets to be delivered.
    awaiting_nv: BTreeMap<VertexRef, Vertex>,
    r_delivered: BTreeMap<(Round, PartyId), Vertex>,
    /// Strong edges of the first proposal seen per (round, source).
    first_messages: BTreeMap<Round, BTreeMap<PartyId, BTreeSet<VertexRef>>>,
    timeouts: BTreeMap<Round, BTreeSet<PartyId>>,
    timeout_sent: BTreeSet<Round>,
    committed_round: Round,
    leader_stack: Vec<VertexRef>,
    delivered: BTreeSet<VertexRef>,
    committed_leaders: Vec<VertexRef>,
    blocks: VecDeque<Bytes>,
    out: NodeOutput<T::Message>,
}

impl<T: VertexTransport> SailfishNode<T> {
    pub fn new(params: SystemParams, me: PartyId, config: SailfishConfig, transport: T) -> Self {
        SailfishNode {
            params,
            me,
            config,
            transport,
            round: 0,
            dag: Dag::default(),
            buffer: BTreeMap::new(),
            awaiting_nv: BTreeMap::new(),
            r_delivered: BTreeMap::new(),
            first_messages: BTreeMap::new(),
            timeouts: BTreeMap::new(),
            timeout_sent: BTreeSet::new(),
            committed_round: 0,
            leader_stack: Vec::new(),
            delivered: BTreeSet::new(),
            committed_leaders: Vec::new(),
            blocks: VecDeque::new(),
            out: NodeOutput::default(),
        }
    }

    pub fn me(&self) -> PartyId {
        self.me
    }

    pub fn round(&self) -> Round {
        self.round
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn committed_round(&self) -> Round {
        self.committed_round
    }

    /// Committed leaders in the order their histories were delivered.
    pub fn committed_leaders(&self) -> &[VertexRef] {
        &self.committed_leaders
    }

    pub fn delivered_count(&self) -> usize {
        self.delivered.len()
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len() + self.awaiting_nv.len()
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    /// Queues a block for a future vertex of this party.
    pub fn a_bcast(&mut self, block: Bytes) {
        self.blocks.push_back(block);
    }

    pub fn start(&mut self) -> NodeOutput<T::Message> {
        if self.round == 0 {
            self.advance_round(1, true);
        }
        self.take()
    }

    pub fn handle(&mut self, from: PartyId, msg: SailfishMessage<T::Message>) -> NodeOutput<T::Message> {
        match msg {
            SailfishMessage::Rbc(m) => {
                let out = self.transport.handle(from, m);
                self.absorb(out);
            }
            SailfishMessage::Timeout(r) => self.on_timeout(from, r),
        }
        self.take()
    }

    pub fn on_timer(&mut self, round: Round) -> NodeOutput<T::Message> {
        if round == self.round
            && self.dag.leader_vertex(round, self.params.n()).is_none()
            && self.timeout_sent.insert(round)
        {
            self.multicast_timeout(round, false);
        }
        self.take()
    }

    /// Evaluates round advancement. Call after each batch of same-time inputs.
    pub fn settle(&mut self) -> NodeOutput<T::Message> {
        self.try_advance();
        self.take()
    }

    fn take(&mut self) -> NodeOutput<T::Message> {
        std::mem::take(&mut self.out)
    }

    fn quorum(&self) -> usize {
        2 * self.params.f() + 1
    }

    fn violation(&mut self, from: PartyId, kind: ViolationKind) {
        self.out.events.push(NodeEvent::Violation(Violation { from, kind }));
    }

    fn absorb(&mut self, t: TransportOutput<T::Message>) {
        self.out.messages.extend(t.messages.into_iter().map(|(to, m)| (to, SailfishMessage::Rbc(m))));
        self.out.events.extend(t.violations.into_iter().map(NodeEvent::Violation));
        for (id, payload) in t.first_proposals {
            self.on_first_message(id, &payload);
        }
        for (id, payload) in t.delivered {
            self.on_r_deliver(id, &payload);
        }
    }

    /// Decodes and shape-checks a vertex carried by instance `id`.
    fn parse(&mut self, id: InstanceId, payload: &[u8]) -> Option<Vertex> {
        let v = match Vertex::decode(payload) {
            Ok(v) => v,
            Err(_) => {
                self.violation(id.broadcaster, ViolationKind::MalformedVertex);
                return None;
            }
        };
        if v.source != id.broadcaster || v.round != id.seq || v.check_structure(self.params).is_err() {
            self.violation(id.broadcaster, ViolationKind::InvalidVertex);
            return None;
        }
        Some(v)
    }

    fn on_first_message(&mut self, id: InstanceId, payload: &[u8]) {
        let Some(v) = self.parse(id, payload) else { return };
        let round = v.round;
        let seen = self.first_messages.entry(round).or_default();
        if seen.contains_key(&v.source) {
            return;
        }
        seen.insert(v.source, v.strong_edges);
        if round >= 2 {
            self.rule_first_messages(round - 1);
        }
    }

    fn on_r_deliver(&mut self, id: InstanceId, payload: &[u8]) {
        let Some(v) = self.parse(id, payload) else { return };
        let key = (v.round, v.source);
        if self.r_delivered.contains_key(&key) {
            return;
        }
        self.r_delivered.insert(key, v.clone());
        if v.needs_no_vote_proof(self.params.n()) {
            self.awaiting_nv.insert(v.reference(), v);
        } else {
            self.add_or_buffer(v);
        }
        self.check_awaiting_nv();
    }

    /// Releases leader vertices whose no-vote targets have all been delivered
    /// and really lack an edge to the skipped leader. Any other outcome means
    /// the vertex is held forever.
    fn check_awaiting_nv(&mut self) {
        let n = self.params.n();
        let mut ready = Vec::new();
        let mut rejected = Vec::new();
        for (r, v) in &self.awaiting_nv {
            let mut all_present = true;
            let mut valid = true;
            for e in &v.nv_edges {
                match self.r_delivered.get(&(e.round, e.source)) {
                    Some(u) if u.reference() == *e => valid &= !u.has_strong_edge_to_leader(n),
                    Some(_) => valid = false,
                    None => all_present = false,
                }
            }
            if !valid {
                rejected.push(*r);
            } else if all_present {
                ready.push(*r);
            }
        }
        for r in rejected {
            self.awaiting_nv.remove(&r);
            self.violation(r.source, ViolationKind::InvalidVertex);
        }
        for r in ready {
            if let Some(v) = self.awaiting_nv.remove(&r) {
                self.add_or_buffer(v);
            }
        }
    }

    fn add_or_buffer(&mut self, v: Vertex) {
        let r = v.reference();
        if self.dag.contains(&r) {
            return;
        }
        if self.try_add(r, &v) {
            self.drain_buffer();
        } else {
            self.buffer.insert(r, v);
        }
    }

    fn drain_buffer(&mut self) {
        loop {
            let ready: Vec<VertexRef> = self
                .buffer
                .iter()
                .filter(|(_, v)| self.history_present(v))
                .map(|(r, _)| *r)
                .collect();
            if ready.is_empty() {
                return;
            }
            for r in ready {
                if let Some(v) = self.buffer.remove(&r) {
                    self.try_add(r, &v);
                }
            }
        }
    }

    fn history_present(&self, v: &Vertex) -> bool {
        v.strong_edges
            .iter()
            .chain(&v.weak_edges)
            .chain(&v.nv_edges)
            .all(|e| self.dag.contains(e))
    }

    /// Inserts `v` once its history is present. Returns false if it must wait.
    fn try_add(&mut self, r: VertexRef, v: &Vertex) -> bool {
        if !self.history_present(v) {
            return false;
        }
        if !self.dag.insert(r, v.clone()) {
            // Slot taken by another vertex; reliable broadcast rules this out
            // for every source but a misbehaving self.
            return true;
        }
        self.out.events.push(NodeEvent::VertexAdded(r));
        let n = self.params.n();
        if r.round >= 2 && self.dag.round_len(r.round) > self.params.f() {
            self.rule_dag_votes(r.round - 1);
        }
        if v.is_leader(n) {
            self.rule_first_messages(r.round);
            self.rule_dag_votes(r.round);
        }
        true
    }

    /// Commits the round-`r` leader once 2f+1 first proposals of round r+1
    /// carry a strong edge to it.
    fn rule_first_messages(&mut self, r: Round) {
        let Some(seen) = self.first_messages.get(&(r + 1)) else { return };
        if seen.len() < self.quorum() {
            return;
        }
        let Some((lr, _)) = self.dag.leader_vertex(r, self.params.n()) else { return };
        let lr = *lr;
        let votes = seen.values().filter(|edges| edges.contains(&lr)).count();
        self.try_commit(lr, votes, self.quorum());
    }

    /// Commits the round-`r` leader once f+1 DAG vertices of round r+1 carry a
    /// strong edge to it.
    fn rule_dag_votes(&mut self, r: Round) {
        let Some((lr, _)) = self.dag.leader_vertex(r, self.params.n()) else { return };
        let lr = *lr;
        let votes = self.dag.round(r + 1).filter(|(_, v)| v.strong_edges.contains(&lr)).count();
        self.try_commit(lr, votes, self.params.f() + 1);
    }

    fn try_commit(&mut self, lr: VertexRef, votes: usize, threshold: usize) {
        if lr.round > self.committed_round && votes >= threshold {
            self.commit_leader(lr);
        }
    }

    fn commit_leader(&mut self, v: VertexRef) {
        let n = self.params.n();
        self.leader_stack.push(v);
        self.out.events.push(NodeEvent::LeaderCommitted { leader: v, direct: true });
        let mut cur = v;
        let mut r = v.round - 1;
        while r > self.committed_round {
            if let Some((u, _)) = self.dag.leader_vertex(r, n) {
                let u = *u;
                if self.dag.strong_path(&cur, &u) {
                    self.leader_stack.push(u);
                    self.out.events.push(NodeEvent::LeaderCommitted { leader: u, direct: false });
                    cur = u;
                }
            }
            r -= 1;
        }
        self.committed_round = v.round;
        self.order_vertices();
    }

    fn order_vertices(&mut self) {
        while let Some(l) = self.leader_stack.pop() {
            let mut batch: Vec<VertexRef> =
                self.dag.reachable(&l).into_iter().filter(|u| !self.delivered.contains(u)).collect();
            batch.sort_by_key(|u| (u.round, u.source));
            for u in batch {
                self.delivered.insert(u);
                let block = self.dag.get(&u).map(|x| x.block.clone()).unwrap_or_default();
                self.out.events.push(NodeEvent::Delivered { vertex: u, block });
            }
            self.committed_leaders.push(l);
        }
    }

    fn on_timeout(&mut self, from: PartyId, round: Round) {
        if from >= self.params.n() {
            self.violation(from, ViolationKind::UnexpectedMessage);
            return;
        }
        let set = self.timeouts.entry(round).or_default();
        set.insert(from);
        if set.len() > self.params.f() && self.timeout_sent.insert(round) {
            self.multicast_timeout(round, true);
        }
    }

    fn multicast_timeout(&mut self, round: Round, amplified: bool) {
        let n = self.params.n();
        self.out.messages.extend((0..n).map(|to| (to, SailfishMessage::Timeout(round))));
        self.out.events.push(NodeEvent::TimeoutSent { round, amplified });
    }

    fn timeout_count(&self, round: Round) -> usize {
        self.timeouts.get(&round).map_or(0, BTreeSet::len)
    }

    fn try_advance(&mut self) {
        let n = self.params.n();
        while self.round < self.config.max_round {
            let target = (self.round.max(1)..=self.dag.highest_round()).rev().find(|&r| {
                self.dag.round_len(r) >= self.quorum()
                    && (self.dag.leader_vertex(r, n).is_some() || self.timeout_count(r) >= self.quorum())
            });
            let Some(r) = target else { return };
            let next = r + 1;
            let via_leader = self.dag.leader_vertex(r, n).is_some();
            if leader(next, n) == self.me && !via_leader {
                // Leader entering without the previous leader waits for 2f
                // no-vote witnesses.
                let witnesses = self
                    .dag
                    .round(next)
                    .filter(|(_, v)| v.source != self.me && !v.has_strong_edge_to_leader(n))
                    .count();
                if witnesses < 2 * self.params.f() {
                    return;
                }
            }
            self.advance_round(next, via_leader);
        }
    }

    fn advance_round(&mut self, round: Round, via_leader: bool) {
        let from = self.round;
        self.round = round;
        self.out.events.push(NodeEvent::RoundEntered { round, via_leader, jumped_from: from });
        let factor = if via_leader { 5 } else { 8 };
        self.out.timer = Some(TimerRequest { round, after_us: factor * self.config.delta_bound_us });
        self.broadcast_vertex(round);
    }

    fn broadcast_vertex(&mut self, round: Round) {
        let v = self.create_new_vertex(round);
        let r = v.reference();
        self.out.events.push(NodeEvent::VertexBroadcast(r));
        // Our own vertex enters the DAG on reliable delivery like any other,
        // so it never counts toward a commit before it is delivered.
        let payload = v.encode();
        let out = self.transport.broadcast(round, payload);
        self.absorb(out);
    }

    fn create_new_vertex(&mut self, round: Round) -> Vertex {
        let n = self.params.n();
        let block = self.blocks.pop_front().unwrap_or_default();
        let strong_edges: BTreeSet<VertexRef> =
            if round > 1 { self.dag.round(round - 1).map(|(r, _)| *r).collect() } else { BTreeSet::new() };
        let mut nv_edges = BTreeSet::new();
        if round > 1 && leader(round, n) == self.me && !strong_edges.iter().any(|e| e.source == leader(round - 1, n))
        {
            nv_edges = self
                .dag
                .round(round)
                .filter(|(_, v)| v.source != self.me && !v.has_strong_edge_to_leader(n))
                .map(|(r, _)| *r)
                .collect();
        }
        let mut reach = self.dag.reachable_from(strong_edges.iter().chain(&nv_edges).copied());
        let mut weak_edges = BTreeSet::new();
        for r in (1..round.saturating_sub(1)).rev() {
            let orphans: Vec<VertexRef> = self.dag.round(r).map(|(u, _)| *u).filter(|u| !reach.contains(u)).collect();
            for u in orphans {
                if reach.contains(&u) {
                    continue;
                }
                weak_edges.insert(u);
                reach.extend(self.dag.reachable(&u));
            }
        }
        Vertex { round, source: self.me, block, strong_edges, weak_edges, nv_edges }
    }
}

/// Digest a delivered block sequence, for comparing total orders cheaply.
pub fn order_digest<'a, I: IntoIterator<Item = &'a VertexRef>>(order: I) -> Digest {
    let mut buf = Vec::new();
    for r in order {
        buf.extend_from_slice(&r.round.to_le_bytes());
        buf.extend_from_slice(&(r.source as u16).to_le_bytes());
        buf.extend_from_slice(&r.digest.0);
    }
    Digest::of(&buf)
}
