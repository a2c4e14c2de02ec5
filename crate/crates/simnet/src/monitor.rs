//! Online checks of the DAG ordering claims across all honest parties.
//!
//! * Strong path: once any honest party directly commits the round-`r`
//!   leader vertex, every leader vertex of a later round in any honest DAG
//!   has a strong path to it.
//! * Commit: if one honest party directly commits the round-`r` leader and
//!   another directly commits a leader in a round `≥ r`, the latter has
//!   committed the round-`r` leader too.
//!
//! Both are checked as soon as either side of a pair appears. Each check is
//! final when made: DAG edges never change, and `commit_leader` finishes
//! within the call that triggered it.

use std::collections::{BTreeMap, BTreeSet};

use optbft_core::sailfish::{leader, Dag, NodeEvent, VertexRef};
use optbft_core::PartyId;

#[derive(Debug, Default)]
pub struct DagMonitor {
    n: usize,
    direct: BTreeSet<VertexRef>,
    /// Leader vertices added to each party's DAG.
    added: Vec<(PartyId, VertexRef)>,
    committed: BTreeMap<PartyId, BTreeSet<VertexRef>>,
    max_direct: BTreeMap<PartyId, u64>,
    pub checks: u64,
    pub failures: Vec<String>,
}

impl DagMonitor {
    pub fn new(n: usize) -> Self {
        DagMonitor { n, ..DagMonitor::default() }
    }

    /// Feeds the events one honest party produced in a single call.
    /// `dag_of` returns the current DAG of any honest party.
    pub fn observe<'a>(&mut self, party: PartyId, events: &[NodeEvent], dag_of: impl Fn(PartyId) -> Option<&'a Dag>) {
        let mut new_direct = Vec::new();
        for e in events {
            match e {
                NodeEvent::LeaderCommitted { leader: l, direct } => {
                    self.committed.entry(party).or_default().insert(*l);
                    if *direct {
                        new_direct.push(*l);
                        let m = self.max_direct.entry(party).or_default();
                        *m = (*m).max(l.round);
                    }
                }
                NodeEvent::VertexAdded(v) if v.source == leader(v.round, self.n) => {
                    for k in self.direct.iter().filter(|k| k.round < v.round) {
                        self.checks += 1;
                        if !dag_of(party).is_some_and(|d| d.strong_path(v, k)) {
                            self.failures.push(format!(
                                "strong path: party {party} added leader r{} without a strong path to committed leader r{}",
                                v.round, k.round
                            ));
                        }
                    }
                    self.added.push((party, *v));
                }
                _ => {}
            }
        }
        for k in new_direct {
            if !self.direct.insert(k) {
                continue;
            }
            for (q, v) in self.added.iter().filter(|(_, v)| v.round > k.round) {
                self.checks += 1;
                if !dag_of(*q).is_some_and(|d| d.strong_path(v, &k)) {
                    self.failures.push(format!(
                        "strong path: party {q} holds leader r{} without a strong path to committed leader r{}",
                        v.round, k.round
                    ));
                }
            }
        }
        self.check_commit_claim();
    }

    fn check_commit_claim(&mut self) {
        for k in &self.direct {
            for (q, &top) in &self.max_direct {
                if top < k.round {
                    continue;
                }
                self.checks += 1;
                if !self.committed.get(q).is_some_and(|c| c.contains(k)) {
                    let msg = format!(
                        "commit: party {q} directly committed round {top} but not the committed leader r{}",
                        k.round
                    );
                    if !self.failures.contains(&msg) {
                        self.failures.push(msg);
                    }
                }
            }
        }
    }
}
