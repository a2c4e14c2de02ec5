use optbft_core::LatencyClass;
use optbft_sim::explore::{explore, ExploreOptions, Support};
use optbft_sim::{run, run_with, Metrics, RunOptions, Scenario, ScenarioError};
use proptest::prelude::*;
use serde_json::{json, Value};

fn scenario(v: Value) -> Scenario {
    Scenario::from_json(&v.to_string()).unwrap()
}

fn jitter_rbc(n: usize, seed: u64, adversary: Value) -> Scenario {
    scenario(json!({
        "id": "jitter",
        "params": {"n": n},
        "protocol": "opt_rbc",
        "delay": {"model": "jitter", "lo_us": 100, "hi_us": 5000},
        "adversary": adversary,
        "instances": 3,
        "seed": seed,
    }))
}

fn honest_deliveries(m: &Metrics) -> usize {
    m.records_for("deliver").filter(|r| m.honest[r.party]).count()
}

#[test]
fn same_seed_gives_byte_identical_metrics() {
    let s = jitter_rbc(7, 42, json!({"silent_count": 1}));
    assert_eq!(run(&s).unwrap().to_csv(), run(&s).unwrap().to_csv());
    let other = jitter_rbc(7, 43, json!({"silent_count": 1}));
    assert_ne!(run(&s).unwrap().to_csv(), run(&other).unwrap().to_csv());
}

#[test]
fn worlds_need_a_partition() {
    let s = scenario(json!({"id": "w", "params": {"n": 4}, "protocol": "opt_rbc", "adversary": {"world": "w1"}}));
    assert!(matches!(run(&s), Err(ScenarioError::WorldUnsupported { n: 4, f: 1 })));
}

#[test]
fn world_three_is_indistinguishable_to_b_for_two_steps_only() {
    let opts = RunOptions { record_transcript: true };
    let world = |w: &str| {
        let s = scenario(json!({
            "id": w, "params": {"n": 7, "f": 2}, "protocol": "opt_rbc",
            "delay": {"model": "uniform", "delta_us": 10}, "adversary": {"world": w},
        }));
        run_with(&s, &opts).unwrap()
    };
    let (w1, w3) = (world("w1"), world("w3"));
    let frames = |o: &optbft_sim::RunOutput, until| -> Vec<_> {
        o.received_by(3, until).into_iter().map(|s| (s.arrive_us, s.from, s.frame.clone())).collect()
    };
    assert_eq!(frames(&w1, 20), frames(&w3, 20));
    assert_ne!(frames(&w1, 40), frames(&w3, 40));
}

#[test]
fn equivocation_at_n7_never_splits_honest_parties() {
    let s = scenario(json!({
        "id": "eq", "params": {"n": 7}, "protocol": "opt_rbc",
        "adversary": {"parties": {"0": {"behavior": "equivocate", "values": {"a": [1, 2, 3], "b": [4, 5, 6]}}}},
    }));
    let m = run(&s).unwrap();
    assert!(m.safety.is_empty(), "{:?}", m.safety);
}

#[test]
fn crashed_leader_triggers_amplified_timeouts_under_jitter() {
    let s = scenario(json!({
        "id": "crash", "params": {"n": 4}, "protocol": "sailfish_opt",
        "delay": {"model": "jitter", "lo_us": 500, "hi_us": 10000}, "delta_bound_us": 10000,
        "adversary": {"parties": {"2": {"behavior": "crash", "at_round": 2}}},
        "rounds": 20, "seed": 1,
    }));
    let out = run_with(&s, &RunOptions::default()).unwrap();
    let m = &out.metrics;
    assert!(m.safety.is_empty(), "{:?}", m.safety);
    assert!(out.monitor_checks > 0);
    assert!(m.records_for("timeout").count() > 0);
    assert!(m.records_for("timeout_amplified").count() > 0);
    assert!(m.records_for("deliver_leader").any(|r| r.instance == "r19/p3"));
}

#[test]
fn balanced_rbc_delivers_in_two_steps() {
    let s = scenario(json!({
        "id": "bal", "params": {"n": 7}, "protocol": "balanced_rbc",
        "delay": {"model": "uniform", "delta_us": 10}, "payload_size": 4096,
    }));
    let m = run(&s).unwrap();
    let steps: Vec<_> = m.records_for("deliver").map(|r| (m.steps_of(r).unwrap().to_integer(), r.class)).collect();
    assert_eq!(steps, vec![(2, Some(LatencyClass::Opt2)); 7]);
}

/// Frozen from the first verified run; a change means the state machines or
/// the explorer's reductions changed.
#[test]
fn explorer_state_counts_are_frozen() {
    let honest = |protocol: &str| {
        let s = scenario(json!({"id": "h", "params": {"n": 4, "f": 1}, "protocol": protocol}));
        explore(&s, Support::None, ExploreOptions::default()).unwrap()
    };
    let r = honest("opt_rbc");
    assert_eq!((r.states, r.terminals, r.max_pending), (17381, 44, 13));
    let r = honest("balanced_rbc");
    assert_eq!((r.states, r.terminals, r.max_pending), (66362, 44, 15));
}

#[test]
fn explorer_with_nothing_pending_has_one_empty_schedule() {
    let s = scenario(json!({
        "id": "e", "params": {"n": 4}, "protocol": "balanced_rbc",
        "adversary": {"parties": {"0": {"behavior": "equivocate", "values": {}}}},
    }));
    let r = explore(&s, Support::Both, ExploreOptions::default()).unwrap();
    assert_eq!((r.schedules, r.terminals, r.terminals_with_delivery, r.max_pending), (1, 1, 0, 0));
}

#[test]
fn explorer_rejects_sailfish() {
    let s = scenario(json!({"id": "s", "params": {"n": 4}, "protocol": "sailfish_opt"}));
    assert!(explore(&s, Support::None, ExploreOptions::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn silent_faults_never_block_or_split_delivery(seed in any::<u64>(), n in prop::sample::select(vec![4usize, 7, 10])) {
        let f = (n - 1) / 3;
        let m = run(&jitter_rbc(n, seed, json!({"silent_count": f}))).unwrap();
        prop_assert!(m.safety.is_empty(), "{:?}", m.safety);
        prop_assert_eq!(honest_deliveries(&m), 3 * (n - f));
    }

    #[test]
    fn equivocation_under_jitter_is_safe(seed in any::<u64>(), split in 1usize..6) {
        let a: Vec<usize> = (1..=split).collect();
        let b: Vec<usize> = (split + 1..7).collect();
        let s = scenario(json!({
            "id": "eq", "params": {"n": 7}, "protocol": "opt_rbc",
            "delay": {"model": "jitter", "lo_us": 100, "hi_us": 5000},
            "adversary": {"parties": {"0": {"behavior": "equivocate", "values": {"a": a, "b": b}}}},
            "seed": seed,
        }));
        let m = run(&s).unwrap();
        prop_assert!(m.safety.is_empty(), "{:?}", m.safety);
        let d = honest_deliveries(&m);
        prop_assert!(d == 0 || d == 6, "{} of 6 honest delivered", d);
    }
}
