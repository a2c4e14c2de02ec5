//! Run metrics and their CSV, JSON and text renderings.
//!
//! Step latency is `(event time − origin) / step`, where `step` is the
//! largest honest-to-honest link delay realized in the run. Under uniform
//! delay δ that is exactly δ.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_rational::Ratio;
use optbft_core::{LatencyClass, PartyId};
use serde::Serialize;

/// One observable event at one party.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub party: PartyId,
    pub instance: String,
    pub event: String,
    pub time_us: u64,
    /// Start of the measured interval: broadcast, dispersal or retrieval start.
    pub origin_us: u64,
    pub class: Option<LatencyClass>,
    /// Bytes this party had sent when the event happened.
    pub bytes_sent: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metrics {
    pub scenario_id: String,
    pub scenario_digest: String,
    pub seed: u64,
    /// Largest honest-to-honest delay realized; 0 if no such message was sent.
    pub step_us: u64,
    pub end_time_us: u64,
    pub records: Vec<Record>,
    /// Indexed by party; a dispersal client, if any, is the last entry.
    pub bytes_sent: Vec<u64>,
    pub bytes_received: Vec<u64>,
    pub honest: Vec<bool>,
    pub messages_by_kind: BTreeMap<String, u64>,
    /// Misbehavior honest parties observed and rejected.
    pub violations: Vec<String>,
    /// Broken safety properties. Nonempty means the run failed.
    pub safety: Vec<String>,
    /// Liveness shortfalls, such as honest parties that never delivered.
    pub undelivered: Vec<String>,
}

/// Formats a step count the way reports and CSV show it: `2.0`, `2.5`,
/// or `7/3` when the decimal would not be exact in three places.
pub fn fmt_steps(r: Ratio<u64>) -> String {
    if r.is_integer() {
        return format!("{}.0", r.to_integer());
    }
    let scaled = r * Ratio::from_integer(1000);
    if scaled.is_integer() {
        let v = scaled.to_integer();
        let s = format!("{}.{:03}", v / 1000, v % 1000);
        return s.trim_end_matches('0').to_string();
    }
    format!("{}/{}", r.numer(), r.denom())
}

impl Record {
    pub fn steps(&self, step_us: u64) -> Option<Ratio<u64>> {
        (step_us > 0).then(|| Ratio::new(self.time_us.saturating_sub(self.origin_us), step_us))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EventSummary {
    pub event: String,
    pub count: usize,
    pub mean_steps: String,
    pub max_steps: String,
    pub min_steps: String,
    pub median_steps: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PartyBytes {
    pub party: PartyId,
    pub honest: bool,
    pub sent: u64,
    pub received: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Summary {
    pub scenario_id: String,
    pub scenario_digest: String,
    pub seed: u64,
    pub step_us: u64,
    pub end_time_us: u64,
    pub latency: Vec<EventSummary>,
    pub class_histogram: BTreeMap<String, usize>,
    pub bytes: Vec<PartyBytes>,
    pub total_honest_bytes_sent: u64,
    pub messages_by_kind: BTreeMap<String, u64>,
    pub violations: Vec<String>,
    pub safety: Vec<String>,
    pub undelivered: Vec<String>,
    pub safe: bool,
}

impl Metrics {
    pub fn steps_of(&self, r: &Record) -> Option<Ratio<u64>> {
        r.steps(self.step_us)
    }

    pub fn records_for<'a>(&'a self, event: &'a str) -> impl Iterator<Item = &'a Record> + 'a {
        self.records.iter().filter(move |r| r.event == event)
    }

    pub fn total_honest_bytes_sent(&self) -> u64 {
        self.bytes_sent.iter().zip(&self.honest).filter(|(_, &h)| h).map(|(b, _)| b).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "scenario_id",
            "party",
            "instance",
            "event",
            "virtual_time_us",
            "steps",
            "class",
            "bytes_sent",
        ])
        .expect("in-memory write");
        for r in &self.records {
            let steps = self.steps_of(r).map(fmt_steps).unwrap_or_default();
            let class = r.class.map(|c| c.to_string()).unwrap_or_default();
            w.write_record([
                self.scenario_id.as_str(),
                &r.party.to_string(),
                &r.instance,
                &r.event,
                &r.time_us.to_string(),
                &steps,
                &class,
                &r.bytes_sent.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn summary(&self) -> Summary {
        let mut by_event: BTreeMap<&str, Vec<Ratio<u64>>> = BTreeMap::new();
        let mut class_histogram = BTreeMap::new();
        for r in &self.records {
            if let Some(s) = self.steps_of(r) {
                by_event.entry(r.event.as_str()).or_default().push(s);
            }
            if let Some(c) = r.class {
                *class_histogram.entry(c.to_string()).or_insert(0) += 1;
            }
        }
        let latency = by_event
            .into_iter()
            .map(|(event, mut v)| {
                v.sort();
                let sum = v.iter().fold(Ratio::from_integer(0), |a, b| a + b);
                EventSummary {
                    event: event.to_string(),
                    count: v.len(),
                    mean_steps: fmt_steps(sum / Ratio::from_integer(v.len() as u64)),
                    max_steps: fmt_steps(*v.last().expect("nonempty")),
                    min_steps: fmt_steps(v[0]),
                    median_steps: fmt_steps(v[(v.len() - 1) / 2]),
                }
            })
            .collect();
        let bytes = (0..self.bytes_sent.len())
            .map(|p| PartyBytes {
                party: p,
                honest: self.honest[p],
                sent: self.bytes_sent[p],
                received: self.bytes_received[p],
            })
            .collect();
        Summary {
            scenario_id: self.scenario_id.clone(),
            scenario_digest: self.scenario_digest.clone(),
            seed: self.seed,
            step_us: self.step_us,
            end_time_us: self.end_time_us,
            latency,
            class_histogram,
            bytes,
            total_honest_bytes_sent: self.total_honest_bytes_sent(),
            messages_by_kind: self.messages_by_kind.clone(),
            violations: self.violations.clone(),
            safety: self.safety.clone(),
            undelivered: self.undelivered.clone(),
            safe: self.safety.is_empty(),
        }
    }

    pub fn report(&self) -> String {
        let s = self.summary();
        let mut out = String::new();
        let _ = writeln!(out, "scenario {} (digest {}, seed {})", s.scenario_id, s.scenario_digest, s.seed);
        let _ = writeln!(out, "step = {} us, end = {} us", s.step_us, s.end_time_us);
        let _ = writeln!(out, "latency (steps of δ):");
        for e in &s.latency {
            let _ = writeln!(
                out,
                "  {:<20} n={:<5} mean {} δ  median {} δ  min {} δ  max {} δ",
                e.event, e.count, e.mean_steps, e.median_steps, e.min_steps, e.max_steps
            );
        }
        if !s.class_histogram.is_empty() {
            let classes: Vec<String> = s.class_histogram.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = writeln!(out, "classes: {}", classes.join(" "));
        }
        let _ = writeln!(out, "bytes sent by honest parties: {}", s.total_honest_bytes_sent);
        for b in &s.bytes {
            let tag = if b.honest { "" } else { " (corrupt)" };
            let _ = writeln!(out, "  party {:<3} sent {:>10} received {:>10}{tag}", b.party, b.sent, b.received);
        }
        let timeouts: Vec<&Record> =
            self.records.iter().filter(|r| r.event.starts_with("timeout")).collect();
        if !timeouts.is_empty() {
            let amplified = timeouts.iter().filter(|r| r.event == "timeout_amplified").count();
            let _ = writeln!(out, "timeouts: {} sent, {} by amplification", timeouts.len(), amplified);
            let mut rounds: Vec<&str> = timeouts.iter().map(|r| r.instance.as_str()).collect();
            rounds.dedup();
            let _ = writeln!(out, "  rounds: {}", rounds.join(" "));
        }
        for v in &s.violations {
            let _ = writeln!(out, "rejected: {v}");
        }
        for u in &s.undelivered {
            let _ = writeln!(out, "undelivered: {u}");
        }
        for v in &s.safety {
            let _ = writeln!(out, "SAFETY VIOLATION: {v}");
        }
        let _ = writeln!(out, "verdict: {}", if s.safe { "safe" } else { "UNSAFE" });
        out
    }
}
