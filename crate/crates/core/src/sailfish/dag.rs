use std::collections::{BTreeMap, BTreeSet};

use super::vertex::{leader, Round, Vertex, VertexRef};
use crate::types::PartyId;

/// One party's local view: at most one vertex per (round, source).
#[derive(Debug, Clone, Default)]
pub struct Dag {
    rounds: BTreeMap<Round, BTreeMap<PartyId, (VertexRef, Vertex)>>,
}

impl Dag {
    pub fn contains(&self, r: &VertexRef) -> bool {
        self.rounds
            .get(&r.round)
            .and_then(|m| m.get(&r.source))
            .is_some_and(|(have, _)| have == r)
    }

    pub fn get(&self, r: &VertexRef) -> Option<&Vertex> {
        self.rounds
            .get(&r.round)
            .and_then(|m| m.get(&r.source))
            .filter(|(have, _)| have == r)
            .map(|(_, v)| v)
    }

    pub fn get_vertex(&self, source: PartyId, round: Round) -> Option<(&VertexRef, &Vertex)> {
        self.rounds.get(&round).and_then(|m| m.get(&source)).map(|(r, v)| (r, v))
    }

    pub fn leader_vertex(&self, round: Round, n: usize) -> Option<(&VertexRef, &Vertex)> {
        self.get_vertex(leader(round, n), round)
    }

    pub fn round_len(&self, round: Round) -> usize {
        self.rounds.get(&round).map_or(0, BTreeMap::len)
    }

    pub fn round(&self, round: Round) -> impl Iterator<Item = (&VertexRef, &Vertex)> {
        self.rounds.get(&round).into_iter().flat_map(|m| m.values().map(|(r, v)| (r, v)))
    }

    pub fn highest_round(&self) -> Round {
        self.rounds.keys().next_back().copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.rounds.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// Inserts `v` under `r`. Returns false if the slot is already taken.
    pub(crate) fn insert(&mut self, r: VertexRef, v: Vertex) -> bool {
        let slot = self.rounds.entry(r.round).or_default();
        if slot.contains_key(&r.source) {
            return false;
        }
        slot.insert(r.source, (r, v));
        true
    }

    /// Every vertex reachable from `from` over strong, weak and no-vote edges,
    /// `from` included.
    pub fn reachable(&self, from: &VertexRef) -> BTreeSet<VertexRef> {
        self.closure([*from], true)
    }

    /// Union of [`Dag::reachable`] over several starting points.
    pub fn reachable_from<I: IntoIterator<Item = VertexRef>>(&self, from: I) -> BTreeSet<VertexRef> {
        self.closure(from, true)
    }

    pub fn path(&self, v: &VertexRef, u: &VertexRef) -> bool {
        v == u || self.closure_until(v, u, true)
    }

    pub fn strong_path(&self, v: &VertexRef, u: &VertexRef) -> bool {
        v == u || self.closure_until(v, u, false)
    }

    fn edges<'a>(&'a self, v: &'a Vertex, all: bool) -> impl Iterator<Item = &'a VertexRef> + 'a {
        let extra = all.then(|| v.weak_edges.iter().chain(v.nv_edges.iter()));
        v.strong_edges.iter().chain(extra.into_iter().flatten())
    }

    fn closure<I: IntoIterator<Item = VertexRef>>(&self, from: I, all: bool) -> BTreeSet<VertexRef> {
        let mut seen = BTreeSet::new();
        let mut stack = Vec::new();
        for r in from {
            if self.contains(&r) && seen.insert(r) {
                stack.push(r);
            }
        }
        while let Some(r) = stack.pop() {
            let Some(v) = self.get(&r) else { continue };
            for e in self.edges(v, all) {
                if self.contains(e) && seen.insert(*e) {
                    stack.push(*e);
                }
            }
        }
        seen
    }

    fn closure_until(&self, from: &VertexRef, target: &VertexRef, all: bool) -> bool {
        if !self.contains(from) || !self.contains(target) {
            return false;
        }
        let mut seen = BTreeSet::from([*from]);
        let mut stack = vec![*from];
        while let Some(r) = stack.pop() {
            let Some(v) = self.get(&r) else { continue };
            for e in self.edges(v, all) {
                if e == target {
                    return true;
                }
                // Edges only point to the same or earlier rounds.
                if e.round >= target.round && self.contains(e) && seen.insert(*e) {
                    stack.push(*e);
                }
            }
        }
        false
    }
}
