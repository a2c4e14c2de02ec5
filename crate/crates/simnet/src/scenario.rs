//! Scenario files: the full, serializable description of one simulated run.

use std::collections::{BTreeMap, BTreeSet};

use optbft_core::sailfish::Round;
use optbft_core::{PartyId, SystemParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delay::DelayModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    OptRbc,
    BalancedRbc,
    Avid,
    SailfishOpt,
    SailfishBracha,
}

impl Protocol {
    pub fn is_rbc(self) -> bool {
        matches!(self, Protocol::OptRbc | Protocol::BalancedRbc)
    }

    pub fn is_sailfish(self) -> bool {
        matches!(self, Protocol::SailfishOpt | Protocol::SailfishBracha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSpec {
    pub n: usize,
    /// Defaults to the largest `f` with `n ≥ 3f + 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<usize>,
}

/// What a corrupt party does.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "behavior", rename_all = "snake_case", deny_unknown_fields)]
pub enum Behavior {
    /// Sends nothing.
    Silent,
    /// Runs the protocol but drops its own echo, vote and ready messages.
    WithholdEchoReady,
    /// As broadcaster, proposes `value` to the listed recipients, then stays
    /// silent. Recipients not listed get nothing.
    Equivocate { values: BTreeMap<String, Vec<PartyId>> },
    /// Runs the protocol but adds `delay_us` to every message sent to `targets`.
    SelectiveDelay { targets: Vec<PartyId>, delay_us: u64 },
    /// Runs the protocol until the given round is entered or time passes,
    /// then stops for good without sending that step's output.
    Crash {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        at_round: Option<Round>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        at_us: Option<u64>,
    },
    /// Runs the protocol as if the broadcaster had proposed `value`.
    PretendInput { value: String },
}

/// The four executions of the optimistic-resilience lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum World {
    W1,
    W2,
    W3,
    W4,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub parties: BTreeMap<PartyId, Behavior>,
    /// Marks this many extra non-broadcaster parties silent, highest ids first.
    #[serde(default)]
    pub silent_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world: Option<World>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalancedModeSpec {
    #[default]
    Balanced,
    Unbalanced,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalancedSpec {
    #[serde(default)]
    pub mode: BalancedModeSpec,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AvidModeSpec {
    #[default]
    Full,
    RootOnly,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientSpec {
    #[default]
    Honest,
    /// Commits to a share vector that is not a codeword.
    Inconsistent,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvidSpec {
    #[serde(default)]
    pub mode: AvidModeSpec,
    #[serde(default)]
    pub client: ClientSpec,
    /// When the client starts retrieval; defaults to ten maximum link delays.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieve_at_us: Option<u64>,
}

fn default_payload() -> usize {
    64
}

fn one() -> u64 {
    1
}

fn twenty() -> u64 {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    pub params: ParamsSpec,
    pub protocol: Protocol,
    #[serde(default)]
    pub delay: DelayModel,
    #[serde(default)]
    pub gst_us: u64,
    /// Post-GST delay bound Δ; defaults to the delay model's maximum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_bound_us: Option<u64>,
    #[serde(default)]
    pub adversary: AdversarySpec,
    #[serde(default = "default_payload")]
    pub payload_size: usize,
    /// Broadcast instances for the RBC protocols.
    #[serde(default = "one")]
    pub instances: u64,
    /// Rounds for the DAG protocols.
    #[serde(default = "twenty")]
    pub rounds: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub broadcaster: PartyId,
    #[serde(default)]
    pub balanced: BalancedSpec,
    #[serde(default)]
    pub avid: AvidSpec,
    /// Hard stop for the event loop.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_time_us: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Params(#[from] optbft_core::ParamsError),
    #[error("party {0} out of range")]
    PartyOutOfRange(PartyId),
    #[error("{corrupt} corrupt parties exceed f = {f}")]
    TooManyCorrupt { corrupt: usize, f: usize },
    #[error("behavior {behavior} is not supported for {protocol:?}")]
    UnsupportedBehavior { behavior: &'static str, protocol: Protocol },
    #[error("only the broadcaster can equivocate")]
    EquivocatorNotBroadcaster,
    #[error("party {0} is listed under more than one equivocated value")]
    DuplicateRecipient(PartyId),
    #[error("world partitions need an RBC protocol and 3f+1 ≤ n ≤ 4f−1 with f ≥ 2, got n = {n}, f = {f}")]
    WorldUnsupported { n: usize, f: usize },
    #[error("worlds fix the adversary; do not combine with other corrupt parties")]
    WorldWithAdversary,
    #[error("world partitions use party 0 as the broadcaster")]
    WorldBroadcaster,
    #[error("delay model: {0}")]
    Delay(String),
    #[error("{0} must be at least 1")]
    Zero(&'static str),
}

impl Behavior {
    pub fn name(&self) -> &'static str {
        match self {
            Behavior::Silent => "silent",
            Behavior::WithholdEchoReady => "withhold_echo_ready",
            Behavior::Equivocate { .. } => "equivocate",
            Behavior::SelectiveDelay { .. } => "selective_delay",
            Behavior::Crash { .. } => "crash",
            Behavior::PretendInput { .. } => "pretend_input",
        }
    }
}

/// The broadcaster and sets A through E of the lower-bound partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub s: PartyId,
    pub a: Vec<PartyId>,
    pub b: Vec<PartyId>,
    pub c: Vec<PartyId>,
    pub d: Vec<PartyId>,
    pub e: Vec<PartyId>,
}

impl Partition {
    /// `|A| = |D| = ⌊(n−2f+2)/2⌋`; `|B| = |C|` is `f−2` with `|E| = 1` for even
    /// `n`, and `f−1` with `|E| = 0` for odd `n`. Parties are assigned in id
    /// order after the broadcaster 0.
    pub fn new(n: usize, f: usize) -> Option<Partition> {
        if f < 2 || n < 3 * f + 1 || n > 4 * f - 1 {
            return None;
        }
        let ad = (n - 2 * f + 2) / 2;
        let (bc, e) = if n.is_multiple_of(2) { (f - 2, 1) } else { (f - 1, 0) };
        let mut ids = 1..n;
        let mut take = |k: usize| ids.by_ref().take(k).collect::<Vec<_>>();
        let p = Partition { s: 0, a: take(ad), b: take(bc), c: take(bc), d: take(ad), e: take(e) };
        debug_assert_eq!(1 + 2 * ad + 2 * bc + e, n);
        Some(p)
    }

    pub fn corrupt(&self, world: World) -> BTreeSet<PartyId> {
        let set: Vec<PartyId> = match world {
            World::W1 => self.d.clone(),
            World::W2 => self.a.clone(),
            World::W3 => [vec![self.s], self.c.clone(), self.e.clone()].concat(),
            World::W4 => [vec![self.s], self.b.clone(), self.e.clone()].concat(),
        };
        set.into_iter().collect()
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        Ok(s)
    }

    pub fn system_params(&self) -> Result<SystemParams, ScenarioError> {
        Ok(match self.params.f {
            Some(f) => SystemParams::new(self.params.n, f)?,
            None => SystemParams::with_max_faults(self.params.n)?,
        })
    }

    /// Effective behavior of every corrupt party, with `silent_count` expanded.
    /// World scenarios are resolved by the runner and report no entries here.
    pub fn corrupt(&self) -> BTreeMap<PartyId, Behavior> {
        let mut out = self.adversary.parties.clone();
        let mut extra = self.adversary.silent_count;
        for p in (0..self.params.n).rev() {
            if extra == 0 {
                break;
            }
            if p != self.broadcaster && !out.contains_key(&p) {
                out.insert(p, Behavior::Silent);
                extra -= 1;
            }
        }
        out
    }

    pub fn validate(&self) -> Result<SystemParams, ScenarioError> {
        let params = self.system_params()?;
        let (n, f) = (params.n(), params.f());
        self.delay.validate(n).map_err(ScenarioError::Delay)?;
        if self.broadcaster >= n {
            return Err(ScenarioError::PartyOutOfRange(self.broadcaster));
        }
        if self.protocol.is_rbc() && self.instances == 0 {
            return Err(ScenarioError::Zero("instances"));
        }
        if self.protocol.is_sailfish() && self.rounds == 0 {
            return Err(ScenarioError::Zero("rounds"));
        }
        if self.adversary.world.is_some() {
            if !self.protocol.is_rbc() || Partition::new(n, f).is_none() {
                return Err(ScenarioError::WorldUnsupported { n, f });
            }
            if !self.adversary.parties.is_empty() || self.adversary.silent_count > 0 {
                return Err(ScenarioError::WorldWithAdversary);
            }
            if self.broadcaster != 0 {
                return Err(ScenarioError::WorldBroadcaster);
            }
            return Ok(params);
        }
        if self.adversary.silent_count > n {
            return Err(ScenarioError::TooManyCorrupt { corrupt: self.adversary.silent_count, f });
        }
        let corrupt = self.corrupt();
        if corrupt.len() > f {
            return Err(ScenarioError::TooManyCorrupt { corrupt: corrupt.len(), f });
        }
        for (&p, b) in &corrupt {
            if p >= n {
                return Err(ScenarioError::PartyOutOfRange(p));
            }
            let unsupported = |behavior| ScenarioError::UnsupportedBehavior { behavior, protocol: self.protocol };
            match b {
                Behavior::Equivocate { values } => {
                    if !self.protocol.is_rbc() {
                        return Err(unsupported(b.name()));
                    }
                    if p != self.broadcaster {
                        return Err(ScenarioError::EquivocatorNotBroadcaster);
                    }
                    let mut seen = BTreeSet::new();
                    for &to in values.values().flatten() {
                        if to >= n {
                            return Err(ScenarioError::PartyOutOfRange(to));
                        }
                        if !seen.insert(to) {
                            return Err(ScenarioError::DuplicateRecipient(to));
                        }
                    }
                }
                Behavior::PretendInput { .. } if !self.protocol.is_rbc() => return Err(unsupported(b.name())),
                Behavior::SelectiveDelay { targets, .. } => {
                    if let Some(&t) = targets.iter().find(|&&t| t >= n) {
                        return Err(ScenarioError::PartyOutOfRange(t));
                    }
                }
                _ => {}
            }
        }
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(n: usize, f: Option<usize>) -> Scenario {
        Scenario::from_json(&format!(
            r#"{{"id": "t", "params": {{"n": {n}{}}}, "protocol": "opt_rbc"}}"#,
            f.map(|f| format!(", \"f\": {f}")).unwrap_or_default()
        ))
        .unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let s = base(7, None);
        assert_eq!(s.system_params().unwrap().f(), 2);
        assert_eq!(s.payload_size, 64);
        assert_eq!(s.instances, 1);
        assert!(s.validate().is_ok());
    }

    #[test]
    fn parameter_and_fault_gates() {
        assert!(matches!(base(6, Some(2)).validate(), Err(ScenarioError::Params(_))));
        let mut s = base(7, Some(2));
        s.adversary.silent_count = 3;
        assert_eq!(s.validate(), Err(ScenarioError::TooManyCorrupt { corrupt: 3, f: 2 }));
        s.adversary.silent_count = 2;
        assert!(s.validate().is_ok());
        assert_eq!(s.corrupt().keys().copied().collect::<Vec<_>>(), vec![5, 6]);
    }

    #[test]
    fn unknown_fields_are_rejected_with_position() {
        let err = Scenario::from_json("{\n  \"id\": \"x\",\n  \"bogus\": 1\n}").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn lower_bound_partition_sizes() {
        let p = Partition::new(7, 2).unwrap();
        assert_eq!((p.a, p.b, p.c, p.d, p.e), (vec![1, 2], vec![3], vec![4], vec![5, 6], vec![]));
        let p = Partition::new(10, 3).unwrap();
        assert_eq!((p.a.len(), p.b.len(), p.c.len(), p.d.len(), p.e.len()), (3, 1, 1, 3, 1));
        assert_eq!(p.corrupt(World::W3).len(), 3);
        assert!(Partition::new(4, 1).is_none());
        assert!(Partition::new(12, 3).is_none());
    }
}
