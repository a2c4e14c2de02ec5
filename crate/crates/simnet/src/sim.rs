//! Deterministic discrete-event execution of one scenario.
//!
//! Events are ordered by `(time, sequence number)`. After every event at a
//! given instant has run, each DAG node is asked to settle, and any
//! zero-delay messages that produces run at the same instant. Self-addressed
//! messages take zero time; every other link draws from the delay model and,
//! between honest parties, is cut to at most Δ after GST.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use bytes::Bytes;
use optbft_core::avid::{AvidClient, AvidMode, AvidServer};
use optbft_core::balanced::{BalanceMode, BalancedKind, BalancedMessage, BalancedRbcInstance};
use optbft_core::coding::{commit, CodewordVector, Committed};
use optbft_core::rbc::{RbcHub, RbcKind, RbcMessage, RbcMode};
use optbft_core::sailfish::{leader, NodeEvent, Round, SailfishConfig, SailfishMessage, SailfishNode, VertexRef};
use optbft_core::{avid_thresholds, rbc_thresholds, Digest, InstanceId, LatencyClass, PartyId, SystemParams, Violation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest as _, Sha256};

use crate::delay::Links;
use crate::metrics::{Metrics, Record};
use crate::monitor::DagMonitor;
use crate::scenario::{
    AvidModeSpec, BalancedModeSpec, Behavior, ClientSpec, Partition, Protocol, Scenario, ScenarioError, World,
};
use crate::wire::Msg;

/// One message as it crossed the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sent {
    pub send_us: u64,
    pub arrive_us: u64,
    pub from: PartyId,
    pub to: PartyId,
    pub frame: Bytes,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep every sent frame, for transcript comparisons.
    pub record_transcript: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Metrics,
    pub transcript: Vec<Sent>,
    /// Checks made by the DAG monitor, zero for other protocols.
    pub monitor_checks: u64,
}

impl RunOutput {
    /// Frames delivered to `party` no later than `until_us`, in arrival order.
    pub fn received_by(&self, party: PartyId, until_us: u64) -> Vec<&Sent> {
        let mut v: Vec<&Sent> =
            self.transcript.iter().filter(|s| s.to == party && s.arrive_us <= until_us).collect();
        v.sort_by_key(|s| (s.arrive_us, s.from, s.frame.clone()));
        v
    }
}

/// Runs `scenario` and returns its metrics.
pub fn run(scenario: &Scenario) -> Result<Metrics, ScenarioError> {
    run_with(scenario, &RunOptions::default()).map(|o| o.metrics)
}

pub fn run_with(scenario: &Scenario, opts: &RunOptions) -> Result<RunOutput, ScenarioError> {
    let params = scenario.validate()?;
    let mut sim = Sim::new(scenario, params, opts)?;
    sim.execute();
    Ok(sim.finish())
}

/// Payload the broadcaster sends for instance `seq`: `size` bytes expanded
/// from the seed.
pub fn payload(seed: u64, seq: u64, size: usize) -> Bytes {
    let mut out = Vec::with_capacity(size + 32);
    let mut ctr = 0u64;
    while out.len() < size {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(seq.to_le_bytes());
        h.update(ctr.to_le_bytes());
        out.extend_from_slice(&h.finalize());
        ctr += 1;
    }
    out.truncate(size);
    Bytes::from(out)
}

pub fn scenario_digest(s: &Scenario) -> String {
    let json = serde_json::to_vec(s).expect("scenario serializes");
    let d = Sha256::digest(&json);
    d[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// The propose message a broadcaster running `scenario` sends `to` for `value`.
pub(crate) fn proposal_for(scenario: &Scenario, params: SystemParams, to: PartyId, value: Bytes) -> Msg {
    let instance = InstanceId::new(scenario.broadcaster, 0);
    match scenario.protocol {
        Protocol::BalancedRbc => {
            let k = rbc_thresholds(params).decode_k;
            let c = commit(&value, params.n(), k).expect("valid code parameters");
            let kind = match scenario.balanced.mode {
                BalancedModeSpec::Balanced => BalancedKind::Propose(c.fragment(to)),
                BalancedModeSpec::Unbalanced => BalancedKind::ProposeFull { payload: value, root: c.root() },
            };
            Msg::Balanced(BalancedMessage { instance, kind })
        }
        _ => Msg::Rbc(RbcMessage { instance, kind: RbcKind::Propose, payload: value }),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum EventKind {
    Start(PartyId),
    Deliver { from: PartyId, to: PartyId, msg: Msg, len: u64 },
    Timer { party: PartyId, tag: u64 },
    /// A scripted corrupt send, released at its scheduled time.
    Emit { from: PartyId, to: PartyId, msg: Msg },
}

#[derive(Debug)]
struct Event {
    time: u64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, o: &Self) -> bool {
        (self.time, self.seq) == (o.time, o.seq)
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Event {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(o.time, o.seq))
    }
}

/// What a machine call produced.
#[derive(Debug, Default)]
struct Out {
    sends: Vec<(PartyId, Msg)>,
    /// `(after_us, tag)`.
    timers: Vec<(u64, u64)>,
    obs: Vec<Obs>,
}

#[derive(Debug)]
enum Obs {
    Deliver { instance: InstanceId, digest: Digest, class: LatencyClass },
    Stored { root: Digest, class: LatencyClass },
    Retrieved(Option<Bytes>),
    Dag(NodeEvent),
    Violation(Violation),
}

const RETRIEVE_TAG: u64 = u64::MAX;

#[derive(Debug)]
enum Machine {
    Rbc(RbcHub),
    Balanced { params: SystemParams, me: PartyId, mode: BalanceMode, inst: BTreeMap<InstanceId, BalancedRbcInstance> },
    AvidServer(AvidServer),
    AvidClient { client: AvidClient, dispersal: Option<Committed>, payload: Bytes, retrieve_at: u64 },
    Sailfish(Box<SailfishNode<RbcHub>>),
}

impl Machine {
    fn start(&mut self, me: PartyId, input: &Input) -> Out {
        let mut out = Out::default();
        match self {
            Machine::Rbc(hub) => {
                for (seq, p) in input.proposals(me) {
                    let sends = hub.broadcast(seq, p).expect("fresh instance");
                    out.sends.extend(sends.into_iter().map(|(to, m)| (to, Msg::Rbc(m))));
                }
            }
            Machine::Balanced { params, me: my, mode, inst } => {
                for (seq, p) in input.proposals(me) {
                    let id = InstanceId::new(*my, seq);
                    let i = inst.entry(id).or_insert_with(|| BalancedRbcInstance::new(*params, *my, id, *mode));
                    let sends = i.broadcast(&p).expect("fresh instance");
                    out.sends.extend(sends.into_iter().map(|(to, m)| (to, Msg::Balanced(m))));
                }
            }
            Machine::AvidServer(_) => {}
            Machine::AvidClient { client, dispersal, payload, retrieve_at } => {
                let sends = match dispersal {
                    Some(c) => client.disperse_committed(c),
                    None => client.disperse(payload),
                }
                .expect("fresh dispersal");
                out.sends.extend(sends.into_iter().map(|(to, m)| (to, Msg::Avid(m))));
                out.timers.push((*retrieve_at, RETRIEVE_TAG));
            }
            Machine::Sailfish(node) => {
                for r in 1..=input.rounds {
                    node.a_bcast(payload(input.seed ^ ((me as u64) << 32), r, input.payload_size));
                }
                out.absorb_node(node.start());
            }
        }
        out
    }

    fn handle(&mut self, from: PartyId, msg: Msg) -> Out {
        let mut out = Out::default();
        match (self, msg) {
            (Machine::Rbc(hub), Msg::Rbc(m)) => {
                let step = hub.handle(from, m);
                out.sends.extend(step.messages.into_iter().map(|(to, m)| (to, Msg::Rbc(m))));
                out.obs.extend(step.violations.into_iter().map(Obs::Violation));
                for (instance, d) in step.deliveries {
                    out.obs.push(Obs::Deliver { instance, digest: Digest::of(&d.payload), class: d.class });
                }
            }
            (Machine::Balanced { params, me, mode, inst }, Msg::Balanced(m)) => {
                let id = m.instance;
                if id.broadcaster >= params.n() {
                    return out;
                }
                let i = inst.entry(id).or_insert_with(|| BalancedRbcInstance::new(*params, *me, id, *mode));
                let step = i.handle(from, m);
                out.sends.extend(step.messages.into_iter().map(|(to, m)| (to, Msg::Balanced(m))));
                out.obs.extend(step.violations.into_iter().map(Obs::Violation));
                if let Some(d) = step.output {
                    out.obs.push(Obs::Deliver { instance: id, digest: Digest::of(&d.payload), class: d.class });
                }
            }
            (Machine::AvidServer(s), Msg::Avid(m)) => {
                let step = s.handle(from, m);
                out.sends.extend(step.messages.into_iter().map(|(to, m)| (to, Msg::Avid(m))));
                out.obs.extend(step.violations.into_iter().map(Obs::Violation));
                if let Some(o) = step.output {
                    out.obs.push(Obs::Stored { root: o.root, class: o.class });
                }
            }
            (Machine::AvidClient { client, .. }, Msg::Avid(m)) => {
                let step = client.handle(from, m);
                out.obs.extend(step.violations.into_iter().map(Obs::Violation));
                if let Some(v) = step.output {
                    out.obs.push(Obs::Retrieved(v));
                }
            }
            (Machine::Sailfish(node), Msg::Rbc(m)) => out.absorb_node(node.handle(from, SailfishMessage::Rbc(m))),
            (Machine::Sailfish(node), Msg::Timeout(r)) => {
                out.absorb_node(node.handle(from, SailfishMessage::Timeout(r)))
            }
            (_, _) => out.obs.push(Obs::Violation(Violation {
                from,
                kind: optbft_core::ViolationKind::UnexpectedMessage,
            })),
        }
        out
    }

    fn timer(&mut self, tag: u64) -> Out {
        let mut out = Out::default();
        match self {
            Machine::Sailfish(node) => out.absorb_node(node.on_timer(tag)),
            Machine::AvidClient { client, .. } if tag == RETRIEVE_TAG => {
                if let Ok(sends) = client.retrieve(None) {
                    out.sends.extend(sends.into_iter().map(|(to, m)| (to, Msg::Avid(m))));
                }
            }
            _ => {}
        }
        out
    }

    fn settle(&mut self) -> Out {
        let mut out = Out::default();
        if let Machine::Sailfish(node) = self {
            out.absorb_node(node.settle());
        }
        out
    }

    fn sailfish(&self) -> Option<&SailfishNode<RbcHub>> {
        match self {
            Machine::Sailfish(n) => Some(n),
            _ => None,
        }
    }
}

impl Out {
    fn absorb_node(&mut self, o: optbft_core::sailfish::NodeOutput<RbcMessage>) {
        for (to, m) in o.messages {
            let msg = match m {
                SailfishMessage::Rbc(m) => Msg::Rbc(m),
                SailfishMessage::Timeout(r) => Msg::Timeout(r),
            };
            self.sends.push((to, msg));
        }
        if let Some(t) = o.timer {
            self.timers.push((t.after_us, t.round));
        }
        self.obs.extend(o.events.into_iter().map(Obs::Dag));
    }
}

/// Broadcast inputs shared by all parties.
#[derive(Debug, Clone)]
struct Input {
    broadcaster: PartyId,
    instances: u64,
    /// Replaces the generated payload for every instance (world runs).
    fixed: Option<Bytes>,
    seed: u64,
    payload_size: usize,
    rounds: Round,
}

impl Input {
    fn value(&self, seq: u64) -> Bytes {
        self.fixed.clone().unwrap_or_else(|| payload(self.seed, seq, self.payload_size))
    }

    fn proposals(&self, me: PartyId) -> Vec<(u64, Bytes)> {
        if me != self.broadcaster {
            return Vec::new();
        }
        (0..self.instances).map(|s| (s, self.value(s))).collect()
    }
}

#[derive(Debug)]
enum Role {
    Honest,
    Silent,
    Withhold,
    Delay { targets: BTreeSet<PartyId>, extra_us: u64 },
    Crash { at_round: Option<Round>, at_us: Option<u64>, crashed: bool },
    Pretend { value: Bytes },
    /// Sends only what was scheduled up front and ignores all input.
    Scripted,
}

#[derive(Debug)]
struct Party {
    machine: Option<Machine>,
    role: Role,
}

impl Party {
    fn honest(&self) -> bool {
        matches!(self.role, Role::Honest)
    }

    fn active(&self, now: u64) -> bool {
        match self.role {
            Role::Silent | Role::Scripted => false,
            Role::Crash { crashed, at_us, .. } => !crashed && at_us.is_none_or(|t| now < t),
            _ => true,
        }
    }
}

pub(crate) fn is_vote_like(m: &Msg) -> bool {
    match m {
        Msg::Rbc(r) => r.kind != RbcKind::Propose,
        Msg::Balanced(b) => matches!(b.kind, BalancedKind::Echo(_) | BalancedKind::Vote(_) | BalancedKind::Ready(_)),
        Msg::Avid(a) => !matches!(
            a.kind,
            optbft_core::avid::AvidKind::Disperse(_)
                | optbft_core::avid::AvidKind::Retrieve(_)
                | optbft_core::avid::AvidKind::Symbol(_)
        ),
        Msg::Timeout(_) => false,
    }
}

struct Sim<'a> {
    scenario: &'a Scenario,
    params: SystemParams,
    opts: RunOptions,
    links: Links,
    delta_us: u64,
    max_time: u64,
    rng: ChaCha8Rng,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<Event>>,
    parties: Vec<Party>,
    input: Input,
    metrics: Metrics,
    transcript: Vec<Sent>,
    monitor: DagMonitor,
    /// First broadcast time of each vertex.
    vertex_born: BTreeMap<VertexRef, u64>,
    /// Per honest party, its delivered vertices in order.
    dag_orders: BTreeMap<PartyId, Vec<VertexRef>>,
    deliveries: BTreeMap<(PartyId, InstanceId), Digest>,
    stored_roots: BTreeMap<PartyId, Digest>,
    retrieved: Option<Option<Bytes>>,
    client_payload: Option<Bytes>,
}

impl<'a> Sim<'a> {
    fn new(scenario: &'a Scenario, params: SystemParams, opts: &RunOptions) -> Result<Self, ScenarioError> {
        let n = params.n();
        let links = scenario.delay.build(n);
        let delta_us = scenario.delta_bound_us.unwrap_or_else(|| links.max());
        let max_time = scenario.max_time_us.unwrap_or_else(|| {
            let unit = links.max().max(delta_us);
            let rounds = if scenario.protocol.is_sailfish() { scenario.rounds + 2 } else { 10 };
            scenario.gst_us + unit * 20 * rounds
        });
        let fixed = scenario.adversary.world.map(world_input);
        let input = Input {
            broadcaster: scenario.broadcaster,
            instances: if scenario.adversary.world.is_some() { 1 } else { scenario.instances },
            fixed,
            seed: scenario.seed,
            payload_size: scenario.payload_size,
            rounds: scenario.rounds,
        };
        let endpoints = if scenario.protocol == Protocol::Avid { n + 1 } else { n };
        let mut sim = Sim {
            scenario,
            params,
            opts: opts.clone(),
            links,
            delta_us,
            max_time,
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            parties: Vec::new(),
            input,
            metrics: Metrics {
                scenario_id: scenario.id.clone(),
                scenario_digest: scenario_digest(scenario),
                seed: scenario.seed,
                bytes_sent: vec![0; endpoints],
                bytes_received: vec![0; endpoints],
                ..Metrics::default()
            },
            transcript: Vec::new(),
            monitor: DagMonitor::new(n),
            vertex_born: BTreeMap::new(),
            dag_orders: BTreeMap::new(),
            deliveries: BTreeMap::new(),
            stored_roots: BTreeMap::new(),
            retrieved: None,
            client_payload: None,
        };
        sim.build_parties()?;
        Ok(sim)
    }

    fn machine(&mut self, me: PartyId) -> Machine {
        let s = self.scenario;
        let p = self.params;
        let n = p.n();
        match s.protocol {
            Protocol::OptRbc => Machine::Rbc(RbcHub::new(p, me, RbcMode::Optimistic)),
            Protocol::BalancedRbc => Machine::Balanced {
                params: p,
                me,
                mode: match s.balanced.mode {
                    BalancedModeSpec::Balanced => BalanceMode::Balanced,
                    BalancedModeSpec::Unbalanced => BalanceMode::Unbalanced,
                },
                inst: BTreeMap::new(),
            },
            Protocol::Avid => {
                let mode = match s.avid.mode {
                    AvidModeSpec::Full => AvidMode::Full,
                    AvidModeSpec::RootOnly => AvidMode::RootOnly,
                };
                if me < n {
                    return Machine::AvidServer(AvidServer::new(p, me, n, 0, mode));
                }
                let data = self.input.value(0);
                let dispersal = match s.avid.client {
                    ClientSpec::Honest => None,
                    ClientSpec::Inconsistent => Some(inconsistent_commitment(&data, p)),
                };
                self.client_payload = Some(data.clone());
                let retrieve_at = s.avid.retrieve_at_us.unwrap_or(10 * self.links.max());
                Machine::AvidClient { client: AvidClient::new(p, 0, mode), dispersal, payload: data, retrieve_at }
            }
            Protocol::SailfishOpt | Protocol::SailfishBracha => {
                let mode = if s.protocol == Protocol::SailfishOpt { RbcMode::Optimistic } else { RbcMode::Bracha };
                let cfg = SailfishConfig { delta_bound_us: self.delta_us, max_round: s.rounds };
                Machine::Sailfish(Box::new(SailfishNode::new(p, me, cfg, RbcHub::new(p, me, mode))))
            }
        }
    }

    fn build_parties(&mut self) -> Result<(), ScenarioError> {
        let endpoints = self.metrics.bytes_sent.len();
        let world_roles = match self.scenario.adversary.world {
            Some(w) => Some(self.world_roles(w)?),
            None => None,
        };
        let corrupt = self.scenario.corrupt();
        for me in 0..endpoints {
            let machine = self.machine(me);
            let role = if let Some(roles) = &world_roles {
                roles.get(&me).map_or(Role::Honest, |r| r.role())
            } else {
                match corrupt.get(&me) {
                    None => Role::Honest,
                    Some(Behavior::Silent) => Role::Silent,
                    Some(Behavior::WithholdEchoReady) => Role::Withhold,
                    Some(Behavior::SelectiveDelay { targets, delay_us }) => {
                        Role::Delay { targets: targets.iter().copied().collect(), extra_us: *delay_us }
                    }
                    Some(Behavior::Crash { at_round, at_us }) => {
                        Role::Crash { at_round: *at_round, at_us: *at_us, crashed: false }
                    }
                    Some(Behavior::PretendInput { value }) => Role::Pretend { value: Bytes::from(value.clone()) },
                    Some(Behavior::Equivocate { values }) => {
                        for (value, to) in values {
                            for &t in to {
                                let msg = self.proposal_to(t, Bytes::from(value.clone()));
                                self.push(0, EventKind::Emit { from: me, to: t, msg });
                            }
                        }
                        Role::Scripted
                    }
                }
            };
            self.parties.push(Party { machine: Some(machine), role });
        }
        if let Some(roles) = world_roles {
            for (from, r) in roles {
                if let WorldRole::Replay(script) = r {
                    for (t, to, msg) in script {
                        self.push(t, EventKind::Emit { from, to, msg });
                    }
                }
            }
        }
        self.metrics.honest = self.parties.iter().map(Party::honest).collect();
        for p in 0..self.parties.len() {
            self.push(0, EventKind::Start(p));
        }
        Ok(())
    }

    /// The propose message the broadcaster would send `to` for `value`.
    fn proposal_to(&self, to: PartyId, value: Bytes) -> Msg {
        proposal_for(self.scenario, self.params, to, value)
    }

    fn world_roles(&mut self, w: World) -> Result<BTreeMap<PartyId, WorldRole>, ScenarioError> {
        let (n, f) = (self.params.n(), self.params.f());
        let part = Partition::new(n, f).ok_or(ScenarioError::WorldUnsupported { n, f })?;
        let corrupt = part.corrupt(w);
        let mut roles = BTreeMap::new();
        match w {
            World::W1 => {
                for &p in &corrupt {
                    roles.insert(p, WorldRole::Pretend(Bytes::from_static(b"1")));
                }
            }
            World::W2 => {
                for &p in &corrupt {
                    roles.insert(p, WorldRole::Pretend(Bytes::from_static(b"0")));
                }
            }
            World::W3 | World::W4 => {
                let mut base = self.scenario.clone();
                let opts = RunOptions { record_transcript: true };
                base.adversary.world = Some(World::W1);
                let w1 = run_with(&base, &opts)?.transcript;
                base.adversary.world = Some(World::W2);
                let w2 = run_with(&base, &opts)?.transcript;
                let cat = |sets: &[&Vec<PartyId>]| -> BTreeSet<PartyId> { sets.iter().flat_map(|s| s.iter().copied()).collect() };
                // (party, [(source world transcript, recipients)]).
                let plan: Vec<(PartyId, Vec<(&Vec<Sent>, BTreeSet<PartyId>)>)> = if w == World::W3 {
                    let mut v = vec![(part.s, vec![(&w1, cat(&[&part.a, &part.b])), (&w2, cat(&[&part.d]))])];
                    for &c in &part.c {
                        v.push((c, vec![(&w1, cat(&[&part.b])), (&w2, cat(&[&part.a, &part.d]))]));
                    }
                    for &e in &part.e {
                        v.push((e, vec![(&w1, cat(&[&part.b])), (&w2, cat(&[&part.a, &part.d]))]));
                    }
                    v
                } else {
                    let mut v = vec![(part.s, vec![(&w2, cat(&[&part.c, &part.d])), (&w1, cat(&[&part.a]))])];
                    for &b in &part.b {
                        v.push((b, vec![(&w2, cat(&[&part.c])), (&w1, cat(&[&part.a, &part.d]))]));
                    }
                    for &e in &part.e {
                        v.push((e, vec![(&w2, cat(&[&part.c])), (&w2, cat(&[&part.a, &part.d]))]));
                    }
                    v
                };
                for (p, sources) in plan {
                    let mut script = Vec::new();
                    for (transcript, to) in sources {
                        for s in transcript.iter().filter(|s| s.from == p && to.contains(&s.to)) {
                            let msg = Msg::decode(&s.frame).expect("recorded frame decodes");
                            script.push((s.send_us, s.to, msg));
                        }
                    }
                    roles.insert(p, WorldRole::Replay(script));
                }
            }
        }
        Ok(roles)
    }

    fn push(&mut self, time: u64, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Reverse(Event { time, seq: self.seq, kind }));
    }

    fn honest(&self, p: PartyId) -> bool {
        self.parties[p].honest()
    }

    fn send(&mut self, from: PartyId, to: PartyId, msg: Msg, extra_us: u64) {
        let frame = msg.encode();
        let len = frame.len() as u64;
        self.metrics.bytes_sent[from] += len;
        *self.metrics.messages_by_kind.entry(msg.kind_name().to_string()).or_insert(0) += 1;
        let arrive = if from == to {
            self.now
        } else {
            let mut a = self.now + self.links.sample(from, to, &mut self.rng) + extra_us;
            if self.honest(from) && self.honest(to) {
                a = a.min(self.now.max(self.scenario.gst_us) + self.delta_us);
                self.metrics.step_us = self.metrics.step_us.max(a - self.now);
            }
            a
        };
        if self.opts.record_transcript {
            self.transcript.push(Sent { send_us: self.now, arrive_us: arrive, from, to, frame });
        }
        self.push(arrive, EventKind::Deliver { from, to, msg, len });
    }

    fn execute(&mut self) {
        while let Some(Reverse(head)) = self.queue.peek() {
            let t = head.time;
            if t > self.max_time {
                break;
            }
            self.now = t;
            loop {
                while self.queue.peek().is_some_and(|Reverse(e)| e.time == t) {
                    let Reverse(e) = self.queue.pop().expect("peeked");
                    self.dispatch(e.kind);
                }
                for p in 0..self.parties.len() {
                    if self.parties[p].active(t) && matches!(self.parties[p].machine, Some(Machine::Sailfish(_))) {
                        self.call(p, |m| m.settle());
                    }
                }
                if !self.queue.peek().is_some_and(|Reverse(e)| e.time == t) {
                    break;
                }
            }
        }
        self.metrics.end_time_us = self.now;
    }

    fn dispatch(&mut self, kind: EventKind) {
        match kind {
            EventKind::Start(p) => {
                if self.parties[p].active(self.now) {
                    let input = self.input.clone();
                    self.call(p, |m| m.start(p, &input));
                }
            }
            EventKind::Emit { from, to, msg } => self.send(from, to, msg, 0),
            EventKind::Deliver { from, to, msg, len } => {
                self.metrics.bytes_received[to] += len;
                if !self.parties[to].active(self.now) {
                    return;
                }
                let msg = match &self.parties[to].role {
                    Role::Pretend { value } if from == self.scenario.broadcaster => self.substitute(to, msg, value.clone()),
                    _ => msg,
                };
                self.call(to, |m| m.handle(from, msg));
            }
            EventKind::Timer { party, tag } => {
                if self.parties[party].active(self.now) {
                    self.call(party, |m| m.timer(tag));
                }
            }
        }
    }

    /// Replaces a proposal's value, as seen by a party pretending it got `value`.
    fn substitute(&self, me: PartyId, msg: Msg, value: Bytes) -> Msg {
        let is_proposal = match &msg {
            Msg::Rbc(m) => m.kind == RbcKind::Propose,
            Msg::Balanced(m) => matches!(m.kind, BalancedKind::Propose(_) | BalancedKind::ProposeFull { .. }),
            _ => false,
        };
        if is_proposal {
            self.proposal_to(me, value)
        } else {
            msg
        }
    }

    fn call(&mut self, p: PartyId, f: impl FnOnce(&mut Machine) -> Out) {
        let Some(mut machine) = self.parties[p].machine.take() else { return };
        let out = f(&mut machine);
        self.parties[p].machine = Some(machine);
        // A crash at a round swallows the output of the call that entered it.
        if let Role::Crash { at_round: Some(r), crashed, .. } = &mut self.parties[p].role {
            let entered = out.obs.iter().any(|o| matches!(o, Obs::Dag(NodeEvent::RoundEntered { round, .. }) if round >= r));
            if entered {
                *crashed = true;
                return;
            }
        }
        self.apply(p, out);
    }

    fn apply(&mut self, p: PartyId, out: Out) {
        let (extra, targets, withhold) = match &self.parties[p].role {
            Role::Delay { targets, extra_us } => (*extra_us, Some(targets.clone()), false),
            Role::Withhold => (0, None, true),
            _ => (0, None, false),
        };
        for (to, msg) in out.sends {
            if withhold && is_vote_like(&msg) {
                continue;
            }
            let e = if targets.as_ref().is_some_and(|t| t.contains(&to)) { extra } else { 0 };
            self.send(p, to, msg, e);
        }
        for (after, tag) in out.timers {
            self.push(self.now + after, EventKind::Timer { party: p, tag });
        }
        let honest = self.honest(p);
        let mut dag_events = Vec::new();
        for o in out.obs {
            self.observe(p, honest, o, &mut dag_events);
        }
        if honest && !dag_events.is_empty() {
            let parties = &self.parties;
            let dag_of = |q: PartyId| -> Option<&optbft_core::sailfish::Dag> {
                if parties[q].honest() {
                    parties[q].machine.as_ref().and_then(Machine::sailfish).map(|n| n.dag())
                } else {
                    None
                }
            };
            self.monitor.observe(p, &dag_events, dag_of);
        }
    }

    fn record(&mut self, party: PartyId, instance: String, event: &str, origin_us: u64, class: Option<LatencyClass>) {
        self.metrics.records.push(Record {
            party,
            instance,
            event: event.to_string(),
            time_us: self.now,
            origin_us,
            class,
            bytes_sent: self.metrics.bytes_sent[party],
        });
    }

    fn observe(&mut self, p: PartyId, honest: bool, o: Obs, dag_events: &mut Vec<NodeEvent>) {
        let n = self.params.n();
        match o {
            Obs::Violation(v) => {
                if honest {
                    self.metrics.violations.push(format!("party {p}: {} from {}", v.kind, v.from));
                }
            }
            _ if !honest => {
                // Corrupt parties running the protocol still announce their
                // own vertices, which sets the origin for latency.
                if let Obs::Dag(NodeEvent::VertexBroadcast(v)) = o {
                    self.vertex_born.entry(v).or_insert(self.now);
                }
            }
            Obs::Deliver { instance, digest, class } => {
                if self.deliveries.insert((p, instance), digest).is_some() {
                    self.metrics.safety.push(format!("integrity: party {p} delivered {instance} twice"));
                }
                self.record(p, instance.to_string(), "deliver", 0, Some(class));
            }
            Obs::Stored { root, class } => {
                self.stored_roots.insert(p, root);
                self.record(p, "d0".into(), "disperse_complete", 0, Some(class));
            }
            Obs::Retrieved(v) => {
                let event = if v.is_some() { "retrieve_ok" } else { "retrieve_bottom" };
                let origin = self.scenario.avid.retrieve_at_us.unwrap_or(10 * self.links.max());
                self.retrieved = Some(v);
                self.record(p, "d0".into(), event, origin, None);
            }
            Obs::Dag(e) => {
                match &e {
                    NodeEvent::VertexBroadcast(v) => {
                        self.vertex_born.entry(*v).or_insert(self.now);
                    }
                    NodeEvent::Delivered { vertex, .. } => {
                        self.dag_orders.entry(p).or_default().push(*vertex);
                        let origin = self.vertex_born.get(vertex).copied().unwrap_or(self.now);
                        let event = if vertex.source == leader(vertex.round, n) { "deliver_leader" } else { "deliver_vertex" };
                        self.record(p, format!("r{}/p{}", vertex.round, vertex.source), event, origin, None);
                    }
                    NodeEvent::LeaderCommitted { leader: l, direct } => {
                        let origin = self.vertex_born.get(l).copied().unwrap_or(self.now);
                        let event = if *direct { "commit_direct" } else { "commit_indirect" };
                        self.record(p, format!("r{}/p{}", l.round, l.source), event, origin, None);
                    }
                    NodeEvent::TimeoutSent { round, amplified } => {
                        let event = if *amplified { "timeout_amplified" } else { "timeout" };
                        self.record(p, format!("r{round}"), event, self.now, None);
                    }
                    NodeEvent::Violation(v) => {
                        self.metrics.violations.push(format!("party {p}: {} from {}", v.kind, v.from));
                    }
                    _ => {}
                }
                dag_events.push(e);
            }
        }
    }

    fn finish(mut self) -> RunOutput {
        self.check_safety();
        let monitor_checks = self.monitor.checks;
        self.metrics.safety.extend(self.monitor.failures.iter().cloned());
        RunOutput { metrics: self.metrics, transcript: self.transcript, monitor_checks }
    }

    fn check_safety(&mut self) {
        let s = self.scenario;
        let n = self.params.n();
        let honest: Vec<PartyId> = (0..n).filter(|&p| self.honest(p)).collect();
        match s.protocol {
            Protocol::OptRbc | Protocol::BalancedRbc => {
                let instances = if s.adversary.world.is_some() { 1 } else { s.instances };
                let broadcaster_honest = self.honest(s.broadcaster);
                for seq in 0..instances {
                    let id = InstanceId::new(s.broadcaster, seq);
                    let got: BTreeMap<PartyId, Digest> =
                        honest.iter().filter_map(|&p| self.deliveries.get(&(p, id)).map(|d| (p, *d))).collect();
                    let values: BTreeSet<Digest> = got.values().copied().collect();
                    if values.len() > 1 {
                        self.metrics.safety.push(format!("agreement: honest parties delivered {} values for {id}", values.len()));
                    }
                    if broadcaster_honest {
                        let want = Digest::of(&self.input.value(seq));
                        if values.iter().any(|d| *d != want) {
                            self.metrics.safety.push(format!("validity: {id} delivered a value the broadcaster never sent"));
                        }
                    }
                    let missing: Vec<PartyId> = honest.iter().copied().filter(|p| !got.contains_key(p)).collect();
                    if !missing.is_empty() && (broadcaster_honest || !got.is_empty()) {
                        self.metrics.undelivered.push(format!("{id}: parties {missing:?}"));
                    }
                }
            }
            Protocol::Avid => {
                let roots: BTreeSet<Digest> =
                    honest.iter().filter_map(|p| self.stored_roots.get(p).copied()).collect();
                if roots.len() > 1 {
                    self.metrics.safety.push("agreement: servers stored different roots".into());
                }
                if s.avid.client == ClientSpec::Honest {
                    match &self.retrieved {
                        Some(Some(v)) if Some(v) == self.client_payload.as_ref() => {}
                        Some(_) => self.metrics.safety.push("correctness: retrieval returned a different value".into()),
                        None => self.metrics.undelivered.push("retrieval did not finish".into()),
                    }
                }
                let missing: Vec<PartyId> = honest.iter().copied().filter(|p| !self.stored_roots.contains_key(p)).collect();
                if !missing.is_empty() && (s.avid.client == ClientSpec::Honest || !self.stored_roots.is_empty()) {
                    self.metrics.undelivered.push(format!("dispersal incomplete at {missing:?}"));
                }
            }
            Protocol::SailfishOpt | Protocol::SailfishBracha => {
                let orders: Vec<(&PartyId, &Vec<VertexRef>)> =
                    self.dag_orders.iter().filter(|(p, _)| self.parties[**p].honest()).collect();
                for (i, (p, a)) in orders.iter().enumerate() {
                    for (q, b) in &orders[i + 1..] {
                        let k = a.len().min(b.len());
                        if a[..k] != b[..k] {
                            self.metrics.safety.push(format!("total order: parties {p} and {q} diverge"));
                        }
                    }
                    let unique: BTreeSet<&VertexRef> = a.iter().collect();
                    if unique.len() != a.len() {
                        self.metrics.safety.push(format!("integrity: party {p} delivered a vertex twice"));
                    }
                }
                for &p in &honest {
                    if !self.dag_orders.contains_key(&p) {
                        self.metrics.undelivered.push(format!("party {p} delivered no vertices"));
                    }
                }
            }
        }
    }
}

#[derive(Debug)]
enum WorldRole {
    Pretend(Bytes),
    /// `(send time, recipient, message)`.
    Replay(Vec<(u64, PartyId, Msg)>),
}

impl WorldRole {
    fn role(&self) -> Role {
        match self {
            WorldRole::Pretend(v) => Role::Pretend { value: v.clone() },
            WorldRole::Replay(_) => Role::Scripted,
        }
    }
}

/// The honest broadcaster's input in each world; W3 and W4 have none.
fn world_input(w: World) -> Bytes {
    match w {
        World::W2 => Bytes::from_static(b"1"),
        _ => Bytes::from_static(b"0"),
    }
}

/// A commitment to `data`'s shares with one parity share altered, so the
/// vector is not a codeword.
pub fn inconsistent_commitment(data: &[u8], p: SystemParams) -> Committed {
    let n = p.n();
    let k = avid_thresholds(p).decode_k;
    let honest = commit(data, n, k).expect("valid code parameters");
    let mut shares = honest.vector.shares().to_vec();
    shares[n - 1][0] ^= 0x5a;
    Committed::new(CodewordVector::from_shares_unchecked(k, shares))
}
