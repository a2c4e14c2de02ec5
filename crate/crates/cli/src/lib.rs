//! Scenario loading, overrides, sweeps and output writing behind the
//! `optbft` binary.

use std::fs;
use std::path::{Path, PathBuf};

use optbft_core::{avid_thresholds, rbc_thresholds, ThresholdSet};
use optbft_sim::scenario::Partition;
use optbft_sim::{run, Metrics, Protocol, Scenario};
use rayon::prelude::*;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid --set {0:?}: expected key=value")]
    BadSet(String),
    #[error("invalid --sweep {0:?}: expected axis=v1,v2,...")]
    BadSweep(String),
    #[error("{path}: {msg}")]
    Invalid { path: String, msg: String },
    #[error("{0} run(s) violated safety")]
    Unsafe(usize),
}

impl CliError {
    /// 1 for usage and I/O problems, 2 for invalid scenarios, 3 for safety
    /// violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::BadSet(_) | CliError::BadSweep(_) => 1,
            CliError::Invalid { .. } => 2,
            CliError::Unsafe(_) => 3,
        }
    }
}

/// A `--set key=value` override. The key is a dotted path; the value is parsed
/// as JSON and falls back to a plain string.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: String,
    pub value: Value,
}

impl Override {
    pub fn parse(s: &str) -> Result<Override, CliError> {
        let (k, v) = s.split_once('=').ok_or_else(|| CliError::BadSet(s.to_string()))?;
        if k.is_empty() {
            return Err(CliError::BadSet(s.to_string()));
        }
        Ok(Override { path: expand_alias(k), value: parse_value(v) })
    }
}

/// One sweep axis: a dotted path and the values it takes.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub path: String,
    pub values: Vec<Value>,
}

impl Axis {
    pub fn parse(s: &str) -> Result<Axis, CliError> {
        let (k, vs) = s.split_once('=').ok_or_else(|| CliError::BadSweep(s.to_string()))?;
        let values: Vec<Value> = vs.split(',').filter(|v| !v.is_empty()).map(parse_value).collect();
        if k.is_empty() || values.is_empty() {
            return Err(CliError::BadSweep(s.to_string()));
        }
        Ok(Axis { path: expand_alias(k), values })
    }
}

fn parse_value(v: &str) -> Value {
    serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()))
}

/// `n` and `f` are shorthand for the system parameters.
fn expand_alias(k: &str) -> String {
    match k {
        "n" | "f" => format!("params.{k}"),
        _ => k.to_string(),
    }
}

/// Sets `path` inside `root`, creating intermediate objects.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), String> {
    let mut cur = root;
    let mut parts = path.split('.').peekable();
    while let Some(part) = parts.next() {
        let obj = cur.as_object_mut().ok_or_else(|| format!("{path}: {part:?} is not inside an object"))?;
        if parts.peek().is_none() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(format!("empty path {path:?}"))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn mkdir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// Loads a scenario file as JSON, applying `overrides` and an optional seed.
pub fn load_value(path: &Path, overrides: &[Override], seed: Option<u64>) -> Result<Value, CliError> {
    let text = read(path)?;
    let invalid = |msg: String| CliError::Invalid { path: path.display().to_string(), msg };
    // Parse the untouched text first so schema errors carry line numbers.
    Scenario::from_json(&text).map_err(|e| invalid(e.to_string()))?;
    let mut v: Value = serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?;
    for o in overrides {
        set_path(&mut v, &o.path, o.value.clone()).map_err(invalid)?;
    }
    if let Some(s) = seed {
        set_path(&mut v, "seed", Value::from(s)).map_err(invalid)?;
    }
    Ok(v)
}

/// Builds and validates a scenario from JSON.
pub fn scenario_from(v: &Value, origin: &str) -> Result<Scenario, CliError> {
    let invalid = |msg: String| CliError::Invalid { path: origin.to_string(), msg };
    let s: Scenario = serde_json::from_value(v.clone()).map_err(|e| invalid(e.to_string()))?;
    s.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(s)
}

pub fn load(path: &Path, overrides: &[Override], seed: Option<u64>) -> Result<Scenario, CliError> {
    let v = load_value(path, overrides, seed)?;
    scenario_from(&v, &path.display().to_string())
}

/// Writes `metrics.csv`, `summary.json` and `report.txt` into `dir`.
pub fn write_outputs(dir: &Path, m: &Metrics) -> Result<(), CliError> {
    mkdir(dir)?;
    write(&dir.join("metrics.csv"), m.to_csv().as_bytes())?;
    let summary = serde_json::to_vec_pretty(&m.summary()).expect("summary serializes");
    write(&dir.join("summary.json"), &summary)?;
    write(&dir.join("report.txt"), m.report().as_bytes())
}

/// The event whose latency characterizes a protocol in sweep tables.
pub fn primary_event(p: Protocol) -> &'static str {
    match p {
        Protocol::OptRbc | Protocol::BalancedRbc => "deliver",
        Protocol::Avid => "disperse_complete",
        Protocol::SailfishOpt | Protocol::SailfishBracha => "deliver_leader",
    }
}

pub fn cmd_run(path: &Path, out: Option<&Path>, overrides: &[Override], seed: Option<u64>) -> Result<Metrics, CliError> {
    let s = load(path, overrides, seed)?;
    let m = run(&s).map_err(|e| CliError::Invalid { path: path.display().to_string(), msg: e.to_string() })?;
    if let Some(dir) = out {
        write_outputs(dir, &m)?;
    }
    Ok(m)
}

/// One row of the sweep aggregate.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub run: usize,
    pub point: Vec<Value>,
    pub scenario: Scenario,
    pub metrics: Metrics,
}

/// Cross product of `axes` over the template. No axes means one run.
pub fn sweep_points(axes: &[Axis]) -> Vec<Vec<Value>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v.clone());
                    p
                })
            })
            .collect()
    })
}

pub fn cmd_sweep(
    path: &Path,
    axes: &[Axis],
    out: Option<&Path>,
    overrides: &[Override],
    seed: Option<u64>,
) -> Result<Vec<SweepRow>, CliError> {
    let template = load_value(path, overrides, seed)?;
    // Build and validate every point before running any of them.
    let scenarios = sweep_points(axes)
        .into_iter()
        .enumerate()
        .map(|(i, point)| {
            let mut v = template.clone();
            for (axis, value) in axes.iter().zip(&point) {
                set_path(&mut v, &axis.path, value.clone())
                    .map_err(|msg| CliError::Invalid { path: path.display().to_string(), msg })?;
            }
            let origin = format!("{} [run {i}: {}]", path.display(), describe(axes, &point));
            Ok((i, point, scenario_from(&v, &origin)?))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let rows = scenarios
        .into_par_iter()
        .map(|(run_idx, point, scenario)| {
            let metrics = run(&scenario)
                .map_err(|e| CliError::Invalid { path: path.display().to_string(), msg: e.to_string() })?;
            Ok(SweepRow { run: run_idx, point, scenario, metrics })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    if let Some(dir) = out {
        for r in &rows {
            write_outputs(&dir.join(format!("run-{:03}", r.run)), &r.metrics)?;
        }
        write(&dir.join("aggregate.csv"), aggregate_csv(axes, &rows).as_bytes())?;
    }
    Ok(rows)
}

fn describe(axes: &[Axis], point: &[Value]) -> String {
    axes.iter().zip(point).map(|(a, v)| format!("{}={v}", a.path)).collect::<Vec<_>>().join(" ")
}

/// One line per run: axis values, byte totals and primary-event latency.
pub fn aggregate_csv(axes: &[Axis], rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = vec!["run".into()];
    header.extend(axes.iter().map(|a| a.path.clone()));
    header.extend(
        [
            "scenario_id",
            "scenario_digest",
            "protocol",
            "n",
            "f",
            "payload_size",
            "safe",
            "honest_bytes_sent",
            "max_party_sent",
            "min_party_sent",
            "event",
            "count",
            "mean_steps",
            "max_steps",
            "opt2",
            "std3or4",
        ]
        .map(String::from),
    );
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        let s = r.metrics.summary();
        let params = r.scenario.system_params().expect("validated");
        let honest_sent: Vec<u64> = s.bytes.iter().filter(|b| b.honest && b.party < params.n()).map(|b| b.sent).collect();
        let event = primary_event(r.scenario.protocol);
        let lat = s.latency.iter().find(|e| e.event == event);
        let class = |c: &str| s.class_histogram.get(c).copied().unwrap_or(0).to_string();
        let mut rec: Vec<String> = vec![r.run.to_string()];
        rec.extend(r.point.iter().map(|v| match v {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }));
        rec.extend([
            s.scenario_id.clone(),
            s.scenario_digest.clone(),
            serde_json::to_value(r.scenario.protocol).expect("serializes").as_str().unwrap_or_default().to_string(),
            params.n().to_string(),
            params.f().to_string(),
            r.scenario.payload_size.to_string(),
            s.safe.to_string(),
            s.total_honest_bytes_sent.to_string(),
            honest_sent.iter().max().copied().unwrap_or(0).to_string(),
            honest_sent.iter().min().copied().unwrap_or(0).to_string(),
            event.to_string(),
            lat.map_or(0, |e| e.count).to_string(),
            lat.map(|e| e.mean_steps.clone()).unwrap_or_default(),
            lat.map(|e| e.max_steps.clone()).unwrap_or_default(),
            class("opt2"),
            class("std3or4"),
        ]);
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// Static validation report. Each violated invariant is listed; on success
/// the derived thresholds are printed.
pub fn cmd_check(path: &Path, overrides: &[Override]) -> Result<String, CliError> {
    let v = load_value(path, overrides, None)?;
    let origin = path.display().to_string();
    let invalid = |msg: String| CliError::Invalid { path: origin.clone(), msg };
    let s: Scenario = serde_json::from_value(v).map_err(|e| invalid(e.to_string()))?;
    let mut problems = Vec::new();
    if let Err(e) = s.system_params() {
        problems.push(e.to_string());
    }
    let corrupt = s.corrupt().len();
    if let Some(f) = s.params.f.or_else(|| s.system_params().ok().map(|p| p.f())) {
        if corrupt > f {
            problems.push(format!("{corrupt} corrupt parties exceed f = {f}"));
        }
    }
    if problems.is_empty() {
        if let Err(e) = s.validate() {
            problems.push(e.to_string());
        }
    }
    if !problems.is_empty() {
        return Err(invalid(problems.join("; ")));
    }
    let params = s.system_params().expect("checked above");
    let mut out = format!("{}: valid\n", s.id);
    out.push_str(&format!(
        "n={} f={} protocol={}\n",
        params.n(),
        params.f(),
        serde_json::to_value(s.protocol).expect("serializes").as_str().unwrap_or_default()
    ));
    out.push_str(&format!("rbc thresholds: {}\n", fmt_thresholds(&rbc_thresholds(params))));
    if s.protocol == Protocol::Avid {
        out.push_str(&format!("avid thresholds: {}\n", fmt_thresholds(&avid_thresholds(params))));
    }
    if let Some(w) = s.adversary.world {
        let p = Partition::new(params.n(), params.f()).expect("validated");
        out.push_str(&format!(
            "world {w:?}: A={:?} B={:?} C={:?} D={:?} E={:?} corrupt={:?}\n",
            p.a,
            p.b,
            p.c,
            p.d,
            p.e,
            p.corrupt(w)
        ));
    } else {
        let corrupt: Vec<String> = s.corrupt().iter().map(|(p, b)| format!("{p}:{}", b.name())).collect();
        out.push_str(&format!("corrupt: [{}]\n", corrupt.join(", ")));
    }
    Ok(out)
}

pub fn fmt_thresholds(t: &ThresholdSet) -> String {
    let ready = if t.ready_from_echo == t.ready_from_vote {
        format!("ready={}", t.ready_from_echo)
    } else {
        format!("ready_from_echo={} ready_from_vote={}", t.ready_from_echo, t.ready_from_vote)
    };
    format!(
        "opt={} vote={} {ready} commit={} amplify={} decode_k={}",
        t.opt_commit, t.vote, t.commit, t.ready_amplify, t.decode_k
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_overrides_create_intermediate_objects() {
        let mut v = serde_json::json!({"params": {"n": 4}});
        set_path(&mut v, "params.n", Value::from(7)).unwrap();
        set_path(&mut v, "adversary.silent_count", Value::from(2)).unwrap();
        assert_eq!(v, serde_json::json!({"params": {"n": 7}, "adversary": {"silent_count": 2}}));
        assert!(set_path(&mut v, "params.n.x", Value::from(1)).is_err());
    }

    #[test]
    fn override_values_fall_back_to_strings() {
        assert_eq!(Override::parse("n=7").unwrap(), Override { path: "params.n".into(), value: Value::from(7) });
        assert_eq!(Override::parse("protocol=opt_rbc").unwrap().value, Value::from("opt_rbc"));
        assert!(Override::parse("novalue").is_err());
    }

    #[test]
    fn sweep_points_form_a_cross_product() {
        let a = Axis::parse("n=4,7").unwrap();
        let b = Axis::parse("adversary.silent_count=0,1,2").unwrap();
        assert_eq!(sweep_points(&[a, b]).len(), 6);
        assert_eq!(sweep_points(&[]), vec![Vec::<Value>::new()]);
        assert!(Axis::parse("n=").is_err());
    }

    #[test]
    fn thresholds_print_compactly() {
        let p = optbft_core::SystemParams::new(7, 2).unwrap();
        assert_eq!(fmt_thresholds(&rbc_thresholds(p)), "opt=5 vote=4 ready=4 commit=5 amplify=3 decode_k=3");
    }
}
