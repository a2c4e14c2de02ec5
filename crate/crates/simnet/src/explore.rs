//! Exhaustive schedule exploration for single-instance reliable broadcast.
//!
//! Every interleaving of pending point-to-point deliveries is explored by a
//! depth-first search that memoizes global states (party states plus the
//! pending multiset), so schedules that reconverge are explored once while
//! the number of distinct schedules is still counted exactly. Messages a party
//! sends to itself are handled at once, and messages to a party that has
//! already delivered are dropped since they cannot change its output.
//!
//! Corrupt parties are static: silent ones drop everything, scripted ones
//! inject a fixed message set up front and ignore their inputs, and the
//! remaining behaviors run the honest state machine with their outputs
//! filtered. Because every scripted message sits in the pending set, the
//! search covers every order in which the adversary could release them.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::{Hash, Hasher};
use std::rc::Rc;

use bytes::Bytes;
use optbft_core::balanced::{BalanceMode, BalancedKind, BalancedMessage, BalancedRbcInstance};
use optbft_core::coding::commit;
use optbft_core::rbc::{RbcInstance, RbcKind, RbcMessage, RbcMode};
use optbft_core::{rbc_thresholds, Delivery, InstanceId, PartyId, SystemParams};
use thiserror::Error;

use crate::scenario::{BalancedModeSpec, Behavior, Protocol, Scenario, ScenarioError};
use crate::sim::{is_vote_like, proposal_for};
use crate::wire::Msg;

/// Default cap on simultaneously pending deliveries.
pub const DEFAULT_BOUND: usize = 24;

/// Worst-case steps between the first and last honest delivery.
pub const BAD_CASE_STEPS: u32 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExploreError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("exhaustive exploration supports opt_rbc and balanced_rbc with one instance, got {0}")]
    Unsupported(String),
    #[error("{pending} pending deliveries exceed the bound of {bound}")]
    BoundExceeded { pending: usize, bound: usize },
}

/// What a scripted corrupt broadcaster sends after its proposals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Support {
    /// Nothing beyond the proposals.
    None,
    /// Echo, vote and ready for each value, sent to the recipients proposed
    /// that value.
    Split,
    /// Echo, vote and ready for every value, sent to every honest party.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExploreOptions {
    pub bound: usize,
    /// Tag messages with their causal depth and check the bad-case bound.
    /// Depths enlarge the state space, so agreement-only runs leave this off.
    pub track_depth: bool,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        ExploreOptions { bound: DEFAULT_BOUND, track_depth: false }
    }
}

/// Outcome of one exhaustive exploration.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExploreReport {
    /// Distinct complete delivery orders, saturating.
    pub schedules: u128,
    /// Distinct global states visited.
    pub states: usize,
    /// Distinct terminal states.
    pub terminals: usize,
    pub max_pending: usize,
    /// Terminal states in which some honest party delivered.
    pub terminals_with_delivery: usize,
    /// Largest gap, in causal steps, between the first and last honest
    /// delivery. Only set when depths are tracked.
    pub max_bad_case_steps: Option<u32>,
    /// Distinct property violations, capped.
    pub violations: BTreeSet<String>,
}

impl ExploreReport {
    pub fn is_safe(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, Hash)]
enum Machine {
    Rbc(RbcInstance),
    Balanced(BalancedRbcInstance),
}

impl Machine {
    fn delivered(&self) -> Option<&Delivery> {
        match self {
            Machine::Rbc(i) => i.delivered(),
            Machine::Balanced(i) => i.delivered(),
        }
    }

    fn handle(&mut self, from: PartyId, msg: Msg) -> (Vec<(PartyId, Msg)>, bool) {
        match (self, msg) {
            (Machine::Rbc(i), Msg::Rbc(m)) => {
                let s = i.handle(from, m);
                (s.messages.into_iter().map(|(to, m)| (to, Msg::Rbc(m))).collect(), s.output.is_some())
            }
            (Machine::Balanced(i), Msg::Balanced(m)) => {
                let s = i.handle(from, m);
                (s.messages.into_iter().map(|(to, m)| (to, Msg::Balanced(m))).collect(), s.output.is_some())
            }
            _ => (Vec::new(), false),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Role {
    Honest,
    /// Drops every input and sends nothing beyond its script.
    Inert,
    /// Corrupt, but runs the honest machine unchanged.
    Compliant,
    Withhold,
    Pretend(Bytes),
}

type MachineId = u32;
type FrameId = u32;

/// A pending delivery. Ordered so the pending set has a canonical form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct Pending {
    to: PartyId,
    from: PartyId,
    depth: u32,
    frame: FrameId,
}

/// Global state over interned machines and frames, so cloning and hashing
/// never touch protocol payloads.
#[derive(Debug, Clone)]
struct State {
    machines: Vec<MachineId>,
    /// Causal depth of the input that produced each party's delivery.
    delivered_at: Vec<Option<u32>>,
    pending: BTreeMap<Pending, u32>,
    pending_len: usize,
}

impl State {
    fn key(&self) -> u128 {
        let half = |salt: u8| {
            let mut h = DefaultHasher::new();
            salt.hash(&mut h);
            self.machines.hash(&mut h);
            self.delivered_at.hash(&mut h);
            self.pending.hash(&mut h);
            h.finish()
        };
        (u128::from(half(0)) << 64) | u128::from(half(1))
    }

    fn push(&mut self, p: Pending) {
        *self.pending.entry(p).or_insert(0) += 1;
        self.pending_len += 1;
    }

    fn take(&mut self, p: &Pending) {
        let c = self.pending.get_mut(p).expect("pending entry");
        *c -= 1;
        if *c == 0 {
            self.pending.remove(p);
        }
        self.pending_len -= 1;
    }
}

/// Result of one party handling one frame in one machine state.
#[derive(Debug)]
struct Outcome {
    next: MachineId,
    /// Sends after the role's filtering, self-addressed ones included.
    sends: Vec<(PartyId, FrameId)>,
    delivered: bool,
}

/// Per-party table of distinct machine states.
#[derive(Default)]
struct Machines {
    states: Vec<Machine>,
    ids: HashMap<u128, MachineId>,
}

impl Machines {
    fn intern(&mut self, m: Machine) -> MachineId {
        let key = (u128::from(hash_of(&(0u8, &m))) << 64) | u128::from(hash_of(&(1u8, &m)));
        let next = self.states.len() as MachineId;
        *self.ids.entry(key).or_insert_with(|| {
            self.states.push(m);
            next
        })
    }
}

struct Explorer<'a> {
    scenario: &'a Scenario,
    params: SystemParams,
    opts: ExploreOptions,
    roles: Vec<Role>,
    machines: Vec<Machines>,
    frames: Vec<Msg>,
    frame_ids: HashMap<Msg, FrameId>,
    transitions: HashMap<(PartyId, MachineId, PartyId, FrameId), Rc<Outcome>>,
    memo: HashMap<u128, u128>,
    report: ExploreReport,
    broadcast_value: Option<Bytes>,
}

const MAX_VIOLATIONS: usize = 16;

/// The value an honest broadcaster proposes in explored scenarios.
pub fn honest_value() -> Bytes {
    Bytes::from_static(b"0")
}

/// Explores every schedule of `scenario` with the given corrupt-broadcaster
/// support mode. `support` is ignored unless the broadcaster equivocates.
pub fn explore(scenario: &Scenario, support: Support, opts: ExploreOptions) -> Result<ExploreReport, ExploreError> {
    let params = scenario.validate()?;
    if !scenario.protocol.is_rbc() || scenario.instances != 1 || scenario.adversary.world.is_some() {
        return Err(ExploreError::Unsupported(format!("{:?}", scenario.protocol)));
    }
    let mut ex = Explorer {
        scenario,
        params,
        opts,
        roles: Vec::new(),
        machines: Vec::new(),
        frames: Vec::new(),
        frame_ids: HashMap::new(),
        transitions: HashMap::new(),
        memo: HashMap::new(),
        report: ExploreReport::default(),
        broadcast_value: None,
    };
    let init = ex.initial(support)?;
    ex.report.schedules = ex.visit(init)?;
    ex.report.states = ex.memo.len();
    Ok(ex.report)
}

impl Explorer<'_> {
    fn instance(&self) -> InstanceId {
        InstanceId::new(self.scenario.broadcaster, 0)
    }

    fn new_machine(&self, me: PartyId) -> Machine {
        let id = self.instance();
        match self.scenario.protocol {
            Protocol::BalancedRbc => {
                let mode = match self.scenario.balanced.mode {
                    BalancedModeSpec::Balanced => BalanceMode::Balanced,
                    BalancedModeSpec::Unbalanced => BalanceMode::Unbalanced,
                };
                Machine::Balanced(BalancedRbcInstance::new(self.params, me, id, mode))
            }
            _ => Machine::Rbc(RbcInstance::new(self.params, me, id, RbcMode::Optimistic)),
        }
    }

    fn frame(&mut self, msg: Msg) -> FrameId {
        let next = self.frames.len() as FrameId;
        if let Some(&id) = self.frame_ids.get(&msg) {
            return id;
        }
        self.frames.push(msg.clone());
        self.frame_ids.insert(msg, next);
        next
    }

    fn machine(&self, p: PartyId, id: MachineId) -> &Machine {
        &self.machines[p].states[id as usize]
    }

    fn initial(&mut self, support: Support) -> Result<State, ExploreError> {
        let n = self.params.n();
        let corrupt = self.scenario.corrupt();
        let b = self.scenario.broadcaster;
        let mut scripts: Vec<(PartyId, PartyId, Msg)> = Vec::new();
        for p in 0..n {
            let role = match corrupt.get(&p) {
                None => Role::Honest,
                // Delays are subsumed by the schedule enumeration.
                Some(Behavior::SelectiveDelay { .. }) => Role::Compliant,
                Some(Behavior::Silent) => Role::Inert,
                Some(Behavior::WithholdEchoReady) => Role::Withhold,
                Some(Behavior::PretendInput { value }) => Role::Pretend(Bytes::from(value.clone())),
                Some(Behavior::Equivocate { values }) => {
                    scripts.extend(self.equivocation(p, values, support));
                    Role::Inert
                }
                Some(other) => return Err(ExploreError::Unsupported(other.name().to_string())),
            };
            self.roles.push(role);
            let mut table = Machines::default();
            table.intern(self.new_machine(p));
            self.machines.push(table);
        }
        let mut st = State { machines: vec![0; n], delivered_at: vec![None; n], pending: BTreeMap::new(), pending_len: 0 };
        for (from, to, msg) in scripts {
            let f = self.frame(msg);
            self.enqueue(&mut st, from, to, f, 1);
        }
        if self.roles[b] != Role::Inert {
            let v = honest_value();
            if !corrupt.contains_key(&b) {
                self.broadcast_value = Some(v.clone());
            }
            let sends: Vec<(PartyId, FrameId)> = (0..n)
                .map(|to| (to, self.frame(proposal_for(self.scenario, self.params, to, v.clone()))))
                .collect();
            self.emit(&mut st, b, &sends, 0);
        }
        Ok(st)
    }

    /// Scripted messages of an equivocating broadcaster.
    fn equivocation(
        &self,
        me: PartyId,
        values: &BTreeMap<String, Vec<PartyId>>,
        support: Support,
    ) -> Vec<(PartyId, PartyId, Msg)> {
        let n = self.params.n();
        let honest: Vec<PartyId> = (0..n).filter(|&p| p != me).collect();
        let mut out = Vec::new();
        for (value, recipients) in values {
            let v = Bytes::from(value.clone());
            for &to in recipients.iter().filter(|&&to| to != me) {
                out.push((me, to, proposal_for(self.scenario, self.params, to, v.clone())));
            }
            let targets: Vec<PartyId> = match support {
                Support::None => continue,
                Support::Split => recipients.iter().copied().filter(|&to| to != me).collect(),
                Support::Both => honest.clone(),
            };
            for msg in self.support_messages(me, &v) {
                out.extend(targets.iter().map(|&to| (me, to, msg.clone())));
            }
        }
        out
    }

    /// Echo, vote and ready messages the broadcaster would send for `v`.
    fn support_messages(&self, me: PartyId, v: &Bytes) -> Vec<Msg> {
        let instance = self.instance();
        match self.scenario.protocol {
            Protocol::BalancedRbc => {
                let k = rbc_thresholds(self.params).decode_k;
                let c = commit(v, self.params.n(), k).expect("valid code parameters");
                let frag = c.fragment(me);
                [BalancedKind::Echo(frag.clone()), BalancedKind::Vote(frag), BalancedKind::Ready(c.root())]
                    .into_iter()
                    .map(|kind| Msg::Balanced(BalancedMessage { instance, kind }))
                    .collect()
            }
            _ => [RbcKind::Echo, RbcKind::Vote, RbcKind::Ready]
                .into_iter()
                .map(|kind| Msg::Rbc(RbcMessage { instance, kind, payload: v.clone() }))
                .collect(),
        }
    }

    fn accepts(&self, st: &State, p: PartyId) -> bool {
        self.roles[p] != Role::Inert && self.machine(p, st.machines[p]).delivered().is_none()
    }

    /// Party `to` in machine state `id` handling `frame` from `from`. Cached,
    /// since the same local transition recurs across many global states.
    fn step(&mut self, to: PartyId, id: MachineId, from: PartyId, frame: FrameId) -> Rc<Outcome> {
        if let Some(o) = self.transitions.get(&(to, id, from, frame)) {
            return o.clone();
        }
        let mut machine = self.machine(to, id).clone();
        let msg = self.frames[frame as usize].clone();
        let msg = match &self.roles[to] {
            Role::Pretend(v) if from == self.scenario.broadcaster && is_proposal(&msg) => {
                proposal_for(self.scenario, self.params, to, v.clone())
            }
            _ => msg,
        };
        let (sends, delivered) = machine.handle(from, msg);
        let withhold = self.roles[to] == Role::Withhold;
        let sends = sends
            .into_iter()
            .filter(|(_, m)| !(withhold && is_vote_like(m)))
            .map(|(t, m)| (t, self.frame(m)))
            .collect();
        let next = self.machines[to].intern(machine);
        let o = Rc::new(Outcome { next, sends, delivered });
        self.transitions.insert((to, id, from, frame), o.clone());
        o
    }

    /// Whether `to` would ignore `frame` now, and hence forever.
    fn ignored(&mut self, st: &State, to: PartyId, from: PartyId, frame: FrameId) -> bool {
        if !self.accepts(st, to) {
            return true;
        }
        let id = st.machines[to];
        let o = self.step(to, id, from, frame);
        o.sends.is_empty() && !o.delivered && o.next == id
    }

    fn enqueue(&mut self, st: &mut State, from: PartyId, to: PartyId, frame: FrameId, depth: u32) {
        if self.ignored(st, to, from, frame) {
            return;
        }
        let depth = if self.opts.track_depth { depth } else { 0 };
        st.push(Pending { to, from, depth, frame });
    }

    /// Drops pending messages to `to` that its current state ignores.
    fn prune(&mut self, st: &mut State, to: PartyId) {
        let candidates: Vec<(Pending, u32)> =
            st.pending.iter().filter(|(p, _)| p.to == to).map(|(p, c)| (*p, *c)).collect();
        for (p, c) in candidates {
            if self.ignored(st, to, p.from, p.frame) {
                st.pending.remove(&p);
                st.pending_len -= c as usize;
            }
        }
    }

    /// Sends `sends` from `from`, whose triggering input had depth `depth`.
    /// Self-addressed messages are handled immediately at the same depth.
    fn emit(&mut self, st: &mut State, from: PartyId, sends: &[(PartyId, FrameId)], depth: u32) {
        for &(to, frame) in sends.iter().filter(|(to, _)| *to != from) {
            self.enqueue(st, from, to, frame, depth + 1);
        }
        for &(_, frame) in sends.iter().filter(|(to, _)| *to == from) {
            self.deliver(st, from, from, frame, depth);
        }
    }

    fn deliver(&mut self, st: &mut State, from: PartyId, to: PartyId, frame: FrameId, depth: u32) {
        if !self.accepts(st, to) {
            return;
        }
        let o = self.step(to, st.machines[to], from, frame);
        st.machines[to] = o.next;
        if o.delivered {
            st.delivered_at[to] = Some(depth);
        }
        self.emit(st, to, &o.sends, depth);
    }

    fn visit(&mut self, st: State) -> Result<u128, ExploreError> {
        if st.pending_len > self.opts.bound {
            return Err(ExploreError::BoundExceeded { pending: st.pending_len, bound: self.opts.bound });
        }
        self.report.max_pending = self.report.max_pending.max(st.pending_len);
        let key = st.key();
        if let Some(&c) = self.memo.get(&key) {
            return Ok(c);
        }
        let count = if st.pending.is_empty() {
            self.check_terminal(&st);
            1
        } else {
            let mut total: u128 = 0;
            for p in st.pending.keys() {
                let mut next = st.clone();
                next.take(p);
                self.deliver(&mut next, p.from, p.to, p.frame, p.depth);
                self.prune(&mut next, p.to);
                total = total.saturating_add(self.visit(next)?);
            }
            total
        };
        self.memo.insert(key, count);
        Ok(count)
    }

    fn violation(&mut self, s: String) {
        if self.report.violations.len() < MAX_VIOLATIONS {
            self.report.violations.insert(s);
        }
    }

    fn check_terminal(&mut self, st: &State) {
        self.report.terminals += 1;
        let honest: Vec<PartyId> = (0..self.params.n()).filter(|&p| self.roles[p] == Role::Honest).collect();
        let outputs: Vec<(&Bytes, Option<u32>)> = honest
            .iter()
            .filter_map(|&p| self.machine(p, st.machines[p]).delivered().map(|d| (&d.payload, st.delivered_at[p])))
            .collect();
        let values: BTreeSet<&Bytes> = outputs.iter().map(|(v, _)| *v).collect();
        let mut found = Vec::new();
        if values.len() > 1 {
            found.push(format!("agreement: honest parties delivered {} distinct values", values.len()));
        }
        if let Some(v) = &self.broadcast_value {
            if outputs.len() < honest.len() {
                found.push("validity: an honest party did not deliver the honest broadcaster's value".into());
            }
            if values.iter().any(|x| *x != v) {
                found.push("integrity: delivered a value the broadcaster never sent".into());
            }
        }
        let delivered = !outputs.is_empty();
        if delivered && outputs.len() < honest.len() {
            found.push("totality: some but not all honest parties delivered".into());
        }
        let depths: Vec<u32> = outputs.iter().filter_map(|(_, d)| *d).collect();
        let gap = match (depths.iter().min(), depths.iter().max()) {
            (Some(lo), Some(hi)) if self.opts.track_depth => Some(hi - lo),
            _ => None,
        };
        if delivered {
            self.report.terminals_with_delivery += 1;
        }
        if let Some(gap) = gap {
            let best = self.report.max_bad_case_steps.get_or_insert(0);
            *best = (*best).max(gap);
            if gap > BAD_CASE_STEPS {
                found.push(format!("bad case: honest deliveries span {gap} steps"));
            }
        }
        for s in found {
            self.violation(s);
        }
    }
}

fn hash_of<T: Hash>(x: &T) -> u64 {
    let mut h = DefaultHasher::new();
    x.hash(&mut h);
    h.finish()
}

fn is_proposal(m: &Msg) -> bool {
    match m {
        Msg::Rbc(r) => r.kind == RbcKind::Propose,
        Msg::Balanced(b) => matches!(b.kind, BalancedKind::Propose(_) | BalancedKind::ProposeFull { .. }),
        _ => false,
    }
}

/// One named adversary configuration for the exhaustive n=4 oracle.
#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub name: String,
    pub scenario: Scenario,
    pub support: Support,
}

/// Adversary catalog at n=4, f=1 for `protocol`: an honest run, a silent,
/// withholding or input-pretending non-broadcaster, and an equivocating
/// broadcaster under every assignment of proposals {a, b, none} to the three
/// other parties and every support mode.
pub fn catalog(protocol: Protocol) -> Vec<CatalogEntry> {
    let base = |name: &str, adversary: serde_json::Value| {
        let json = serde_json::json!({
            "id": name,
            "params": {"n": 4, "f": 1},
            "protocol": protocol,
            "adversary": adversary,
        });
        Scenario::from_json(&json.to_string()).expect("catalog scenarios parse")
    };
    let mut out = vec![
        CatalogEntry { name: "honest".into(), scenario: base("honest", serde_json::json!({})), support: Support::None },
        CatalogEntry {
            name: "silent_3".into(),
            scenario: base("silent_3", serde_json::json!({"parties": {"3": {"behavior": "silent"}}})),
            support: Support::None,
        },
        CatalogEntry {
            name: "withhold_3".into(),
            scenario: base("withhold_3", serde_json::json!({"parties": {"3": {"behavior": "withhold_echo_ready"}}})),
            support: Support::None,
        },
        CatalogEntry {
            name: "pretend_1_at_3".into(),
            scenario: base(
                "pretend_1_at_3",
                serde_json::json!({"parties": {"3": {"behavior": "pretend_input", "value": "1"}}}),
            ),
            support: Support::None,
        },
        CatalogEntry {
            name: "withhold_broadcaster".into(),
            scenario: base("withhold_broadcaster", serde_json::json!({"parties": {"0": {"behavior": "withhold_echo_ready"}}})),
            support: Support::None,
        },
    ];
    for code in 0..27u32 {
        let mut values: BTreeMap<&str, Vec<PartyId>> = BTreeMap::new();
        let mut tag = String::new();
        for (i, p) in (1..4).enumerate() {
            let c = (code / 3u32.pow(i as u32)) % 3;
            match c {
                0 => {
                    values.entry("a").or_default().push(p);
                    tag.push('a');
                }
                1 => {
                    values.entry("b").or_default().push(p);
                    tag.push('b');
                }
                _ => tag.push('-'),
            }
        }
        for (support, s) in [(Support::None, "none"), (Support::Split, "split"), (Support::Both, "both")] {
            let name = format!("equivocate_{tag}_{s}");
            let adversary = serde_json::json!({"parties": {"0": {"behavior": "equivocate", "values": values}}});
            out.push(CatalogEntry { name: name.clone(), scenario: base(&name, adversary), support });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(protocol: &str, adversary: &str) -> Scenario {
        Scenario::from_json(&format!(
            r#"{{"id": "x", "params": {{"n": 4, "f": 1}}, "protocol": "{protocol}", "adversary": {adversary}}}"#
        ))
        .unwrap()
    }

    #[test]
    fn honest_opt_rbc_is_valid_in_every_schedule() {
        let r = explore(&scenario("opt_rbc", "{}"), Support::None, ExploreOptions::default()).unwrap();
        assert!(r.is_safe(), "{:?}", r.violations);
        assert!(r.schedules > 1);
        assert_eq!(r.terminals, r.terminals_with_delivery);
    }

    #[test]
    fn silent_equivocator_has_exactly_one_schedule_per_empty_script() {
        let s = scenario("opt_rbc", r#"{"parties": {"0": {"behavior": "equivocate", "values": {}}}}"#);
        let r = explore(&s, Support::None, ExploreOptions::default()).unwrap();
        assert_eq!((r.schedules, r.terminals, r.terminals_with_delivery), (1, 1, 0));
    }

    #[test]
    fn bound_guard_refuses_large_pending_sets() {
        let opts = ExploreOptions { bound: 2, track_depth: false };
        let err = explore(&scenario("opt_rbc", "{}"), Support::None, opts).unwrap_err();
        assert!(matches!(err, ExploreError::BoundExceeded { bound: 2, .. }));
    }

    #[test]
    fn catalog_covers_all_proposal_assignments() {
        let c = catalog(Protocol::OptRbc);
        assert_eq!(c.len(), 5 + 27 * 3);
        assert!(c.iter().all(|e| e.scenario.validate().is_ok()));
    }
}
