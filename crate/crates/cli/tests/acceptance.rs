//! Acceptance suite. Prints one PASS/FAIL line per primary criterion and
//! exits nonzero if any fails.
//!
//! Scenario criteria drive the `bsmart` binary and inspect the artifacts it
//! writes. Property criteria (transition table, broker, pipeline, optimizer
//! oracle) exercise the library directly because they need thousands of
//! randomized cases or an independently coded oracle.

use anyhow::{anyhow, bail, ensure, Result};
use bsmart_core::autonomic::{transition, CommissioningReport, Mode, ModeOwner, Outcome, Stimulus};
use bsmart_core::bkr::{Baseline, Bkr, BkrConfig, DeviceRecord, Registry};
use bsmart_core::broker::{Admission, Broker};
use bsmart_core::cdo::{
    etl_cycle, optimize, Evaluation, Evaluator, HourWindow, OptOutcome, OptimizerConfig, ParameterSchedule, SearchSpace,
    TwinEvaluator, ETL_REPORT_LOG,
};
use bsmart_core::cdo::EtlReport;
use bsmart_core::runtime::{topic_for, Building, BuildingConfig, RunSummary, COMMISSIONING_LOG};
use bsmart_core::simulator::{ScenarioScript, SimWorld};
use bsmart_core::stream::{StateVector, StreamEngine, TransformTable, QUARANTINE_TOPIC};
use bsmart_core::types::{EventKind, Quality, SensorMessage, Source};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

const BIN: &str = env!("CARGO_BIN_EXE_bsmart");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures").join(name)
}

struct Output {
    ok: bool,
    stdout: String,
    stderr: String,
}

fn bsmart(args: &[&str]) -> Result<Output> {
    let out = Command::new(BIN).args(args).env_remove("BSMART_CONFIG").output()?;
    Ok(Output {
        ok: out.status.success(),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    })
}

/// `bsmart run` into `out`; returns the summary it wrote.
fn run(out: &Path, scenario: Option<&Path>, config: Option<&Path>, ticks: u64) -> Result<RunSummary> {
    let ticks = ticks.to_string();
    let mut args = vec!["run", "--out", out.to_str().unwrap(), "--ticks", &ticks];
    let sc;
    if let Some(s) = scenario {
        sc = s.to_str().unwrap().to_string();
        args.extend(["--scenario", &sc]);
    }
    let cfg;
    if let Some(c) = config {
        cfg = c.to_str().unwrap().to_string();
        args.extend(["--config", &cfg]);
    }
    let o = bsmart(&args)?;
    ensure!(o.ok, "bsmart run failed: {}", o.stderr);
    Ok(serde_json::from_slice(&std::fs::read(out.join("summary.json"))?)?)
}

fn open_bkr(out: &Path) -> Result<Bkr> {
    Ok(Bkr::open(out.join("bkr"), BkrConfig::default())?.0)
}

// ---------------------------------------------------------------------------
// State machine

/// The building's transition relation, written out edge by edge.
const EDGES: [(Mode, Stimulus, Mode); 7] = [
    (Mode::Initializing, Stimulus::CommissioningComplete, Mode::Optimizing),
    (Mode::Initializing, Stimulus::UpgradeComplete, Mode::Optimizing),
    (Mode::Optimizing, Stimulus::OptimumFound, Mode::DetectingChange),
    (Mode::DetectingChange, Stimulus::DriftDetected, Mode::Optimizing),
    (Mode::DetectingChange, Stimulus::FaultDetected, Mode::Interfacing),
    (Mode::Interfacing, Stimulus::FaultResolvedNoEquipChange, Mode::DetectingChange),
    (Mode::Interfacing, Stimulus::EquipmentChanged, Mode::Initializing),
];

fn oracle(m: Mode, s: Stimulus) -> Option<Mode> {
    EDGES.iter().find(|(a, b, _)| *a == m && *b == s).map(|e| e.2)
}

fn drive_to(target: Mode) -> ModeOwner {
    let path: &[Stimulus] = match target {
        Mode::Initializing => &[],
        Mode::Optimizing => &[Stimulus::CommissioningComplete],
        Mode::DetectingChange => &[Stimulus::CommissioningComplete, Stimulus::OptimumFound],
        Mode::Interfacing => &[
            Stimulus::CommissioningComplete,
            Stimulus::OptimumFound,
            Stimulus::FaultDetected,
        ],
    };
    let mut o = ModeOwner::new();
    for (t, s) in path.iter().enumerate() {
        o.post(*s, "setup");
        o.process(t as u64);
    }
    o
}

fn state_machine() -> Result<String> {
    let mut pairs = 0;
    for m in Mode::ALL {
        for s in Stimulus::ALL {
            pairs += 1;
            ensure!(transition(m, s) == oracle(m, s), "relation differs at ({m:?}, {s:?})");
            let mut o = drive_to(m);
            ensure!(o.mode() == m, "could not reach {m:?}");
            o.post(s, "probe");
            let entries = o.process(100);
            let first = entries.first().ok_or_else(|| anyhow!("({m:?}, {s:?}) not journaled"))?;
            let expected = oracle(m, s).unwrap_or(m);
            ensure!(first.to == expected, "({m:?}, {s:?}) went to {:?}, expected {expected:?}", first.to);
            ensure!(
                (first.outcome == Outcome::Applied) == oracle(m, s).is_some(),
                "({m:?}, {s:?}) outcome {:?}",
                first.outcome
            );
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut replays = 0;
    for _ in 0..200 {
        let mut o = ModeOwner::new();
        let mut history = vec![o.mode()];
        for t in 0..rng.random_range(1..60u64) {
            for _ in 0..rng.random_range(0..3) {
                o.post(Stimulus::ALL[rng.random_range(0..Stimulus::ALL.len())], format!("r{t}"));
            }
            o.process(t);
            history.push(o.mode());
        }
        let text = serde_json::to_string(o.journal())?;
        let reloaded: Vec<_> = serde_json::from_str(&text)?;
        let r = ModeOwner::replay(&reloaded);
        ensure!(serde_json::to_string(r.journal())? == text, "replayed journal differs");
        ensure!(r.state() == o.state(), "replayed state differs");
        for (t, m) in history.iter().skip(1).enumerate() {
            ensure!(ModeOwner::mode_at(r.journal(), t as u64) == *m, "mode history differs at {t}");
        }
        replays += 1;
    }
    Ok(format!("{pairs} pairs match the relation; {replays} random journals replay bit-identically"))
}

// ---------------------------------------------------------------------------
// Broker

fn msg(producer: usize, seq: u64) -> SensorMessage {
    SensorMessage {
        device_id: format!("dev-{producer}"),
        point_id: format!("p{producer}/v"),
        seq_no: seq,
        timestamp: seq as i64,
        value: producer as f64 * 1000.0 + seq as f64,
        unit: "kW".into(),
        quality: Quality::Good,
        source: Source::Native,
    }
}

fn scripts() -> impl Strategy<Value = Vec<Vec<u64>>> {
    prop::collection::vec(
        (1usize..25, prop::collection::vec(0usize..4, 0..8)).prop_map(|(n, dups)| {
            let mut out: Vec<u64> = (1..=n as u64).collect();
            for d in dups {
                let at = (d * 7) % out.len();
                let v = out[at];
                out.insert(at + 1, v);
            }
            out
        }),
        1..5,
    )
}

fn broker_case(scripts: Vec<Vec<u64>>, commit_every: usize, crash_after: usize) -> Result<(), TestCaseError> {
    let fail = |e: String| TestCaseError::fail(e);
    let dir = tempfile::tempdir().map_err(|e| fail(e.to_string()))?;
    let broker = Broker::open(dir.path()).map_err(|e| fail(e.to_string()))?;
    broker.create_topic("t").map_err(|e| fail(e.to_string()))?;
    let handles: Vec<_> = scripts
        .iter()
        .cloned()
        .enumerate()
        .map(|(p, seqs)| {
            let b = broker.clone();
            std::thread::spawn(move || seqs.into_iter().map(|s| b.publish("t", msg(p, s)).unwrap()).collect::<Vec<_>>())
        })
        .collect();
    let admissions: Vec<Admission> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
    let unique: usize = scripts.iter().map(|s| s.iter().collect::<HashSet<_>>().len()).sum();
    let accepted = admissions.iter().filter(|a| matches!(a, Admission::Accepted(_))).count();
    prop_assert_eq!(accepted, unique);
    drop(broker);

    let mut applied = Vec::new();
    let mut seen = HashSet::new();
    let mut reads = 0;
    {
        let b = Broker::open(dir.path()).map_err(|e| fail(e.to_string()))?;
        let mut c = b.resume("t", "engine").map_err(|e| fail(e.to_string()))?;
        for e in c.by_ref() {
            reads += 1;
            if seen.insert(e.msg.dedup_key()) {
                applied.push(e.clone());
            }
            if reads % commit_every == 0 {
                b.commit("t", "engine", e.offset).map_err(|e| fail(e.to_string()))?;
            }
            if reads == crash_after {
                break;
            }
        }
    }
    let b = Broker::open(dir.path()).map_err(|e| fail(e.to_string()))?;
    for e in b.resume("t", "engine").map_err(|e| fail(e.to_string()))? {
        if seen.insert(e.msg.dedup_key()) {
            applied.push(e.clone());
        }
    }
    let log: Vec<_> = b.subscribe("t", 0).map_err(|e| fail(e.to_string()))?.collect();
    prop_assert_eq!(log.len(), unique);
    for (i, e) in log.iter().enumerate() {
        prop_assert_eq!(e.offset, i as u64);
    }
    prop_assert_eq!(&applied, &log);
    for (p, script) in scripts.iter().enumerate() {
        let dev = format!("dev-{p}");
        let seqs: Vec<u64> = log.iter().filter(|e| e.msg.device_id == dev).map(|e| e.msg.seq_no).collect();
        let expected: Vec<u64> = (1..=*script.iter().max().unwrap()).collect();
        prop_assert_eq!(seqs, expected);
    }
    Ok(())
}

fn broker_semantics() -> Result<String> {
    let cases = 1000;
    let mut runner = TestRunner::new(PropConfig {
        cases,
        failure_persistence: None,
        ..PropConfig::default()
    });
    runner
        .run(&(scripts(), 1usize..6, 0usize..40), |(s, c, k)| broker_case(s, c, k))
        .map_err(|e| anyhow!("{e}"))?;
    Ok(format!("{cases} randomized cases: ordered, gap-free, exactly-once across restarts"))
}

// ---------------------------------------------------------------------------
// Pipeline

fn pipeline_completeness() -> Result<String> {
    const TICKS: u64 = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut sim = BuildingConfig::reference().sim;
    sim.seed = rng.random();
    for p in sim.points() {
        if rng.random_bool(0.5) {
            let span = p.range.max - p.range.min;
            sim.noise.insert(p.point_id.clone(), span * rng.random_range(0.0005..0.005));
        }
        sim.cov_thresholds
            .insert(p.point_id.clone(), p.cov_threshold * rng.random_range(0.5..3.0));
    }
    let points = sim.points();
    let skipped: BTreeSet<String> = (0..3)
        .map(|_| points[rng.random_range(0..points.len())].point_id.clone())
        .collect();
    let mut registry = Registry::default();
    for p in points.iter().filter(|p| !skipped.contains(&p.point_id)) {
        registry.register_device(DeviceRecord {
            device_id: p.device_id.clone(),
            point_ids: vec![p.point_id.clone()],
            class: p.quantity.clone(),
            confidence: 1.0,
            system: p.system_id.clone(),
            system_kind: Some(p.system_kind),
            operating_range: p.range,
            unit: p.unit.clone(),
            baseline: Baseline::from_samples(&[(p.range.min + p.range.max) / 2.0]),
            source: Source::Native,
            commissioned_at: 0,
            waived: false,
        })?;
    }
    let snapshot = registry.snapshot();
    let registered: BTreeSet<String> = snapshot.points().map(|(p, _)| p.clone()).collect();
    let kind: BTreeMap<String, &str> = points
        .iter()
        .map(|p| (p.point_id.clone(), topic_for(p.system_kind)))
        .collect();
    let mut topics: Vec<&str> = kind.values().copied().collect::<BTreeSet<_>>().into_iter().collect();
    topics.sort();

    let mut world = SimWorld::new(sim.clone(), ScenarioScript::empty())?;
    let broker = Broker::in_memory();
    for t in &topics {
        broker.create_topic(t)?;
    }
    broker.create_topic(QUARANTINE_TOPIC)?;
    let mut cursors = topics
        .iter()
        .map(|t| broker.resume(t, "pipe"))
        .collect::<Result<Vec<_>, _>>()?;
    let mut engine = StreamEngine::new(sim.start_ms, world.tick_ms(), TransformTable::default());
    let mut live = Vec::with_capacity(TICKS as usize);
    let mut observed = 0u64;
    for t in 0..TICKS {
        for m in world.step(&[])?.messages {
            broker.publish(kind[&m.point_id], m)?;
        }
        let (sv, stats) = engine.ingest_tick(t, &broker, &mut cursors, "pipe", &snapshot)?;
        observed += stats.observed as u64;
        let keys: BTreeSet<String> = sv.values.keys().cloned().collect();
        ensure!(keys == registered, "tick {t}: vector covers {} of {} points", keys.len(), registered.len());
        live.push(serde_json::to_vec(&sv)?);
    }
    let quarantined = broker.high_water_mark(QUARANTINE_TOPIC)?;
    ensure!(quarantined > 0, "unregistered points were not quarantined");

    let mut batches: BTreeMap<u64, Vec<SensorMessage>> = BTreeMap::new();
    for t in &topics {
        for e in broker.subscribe(t, 0)? {
            let w = ((e.msg.timestamp - sim.start_ms) / world.tick_ms()) as u64;
            batches.entry(w).or_default().push(e.msg);
        }
    }
    let mut replay = StreamEngine::new(sim.start_ms, world.tick_ms(), TransformTable::default());
    for (t, expected) in live.iter().enumerate() {
        let batch = batches.remove(&(t as u64)).unwrap_or_default();
        let (sv, _, _): (StateVector, _, _) = replay.assemble(t as u64, batch, &snapshot);
        ensure!(&serde_json::to_vec(&sv)? == expected, "replayed vector differs at tick {t}");
    }
    Ok(format!(
        "{TICKS} ticks x {} points, zero holes ({observed} observed values, {quarantined} quarantined); replay byte-identical",
        registered.len()
    ))
}

// ---------------------------------------------------------------------------
// Detection

fn first_event(s: &RunSummary, kind: EventKind, target: &str) -> Option<u64> {
    s.events
        .iter()
        .filter(|e| e.event.kind == kind && e.event.target == target)
        .map(|e| e.event.detected_at)
        .min()
}

fn detection(tmp: &Path) -> Result<String> {
    const TICKS: u64 = 10_000;
    let quiet = tmp.join("quiet");
    let s = run(&quiet, None, None, TICKS)?;
    ensure!(s.events.is_empty(), "deterministic run raised {} events", s.events.len());

    let bkr = open_bkr(&quiet)?;
    let mut cfg = BuildingConfig::reference();
    for (p, d) in bkr.registry().points() {
        if d.baseline.std > 0.0 {
            cfg.sim.noise.insert(p.clone(), d.baseline.std);
        }
    }
    let noisy_points = cfg.sim.noise.len();
    cfg.sim.seed = 20;
    let cfg_path = tmp.join("noisy.json");
    std::fs::write(&cfg_path, serde_json::to_vec(&cfg)?)?;
    let noisy = run(&tmp.join("noisy"), None, Some(&cfg_path), TICKS)?;
    let points = cfg.sim.points().len() as f64;
    let monitored = (TICKS - cfg.runtime.probe_ticks) as f64;
    let fp_rate = noisy.events.len() as f64 / (points * monitored);
    ensure!(fp_rate <= 0.01, "false-positive rate {fp_rate}");

    let bias = run(&tmp.join("bias"), Some(&fixture("bias_scenario.json")), None, 3100)?;
    let fault_at = first_event(&bias, EventKind::Fault, "chiller-1").ok_or_else(|| anyhow!("no fault raised"))?;
    ensure!(fault_at >= 3000 && fault_at - 3000 <= 40, "fault detected at {fault_at}");
    ensure!(
        first_event(&bias, EventKind::ConceptDrift, "chiller-1").is_none(),
        "bias also reported as drift"
    );

    let drift = run(&tmp.join("drift"), Some(&fixture("drift_scenario.json")), None, 3100)?;
    let drift_at =
        first_event(&drift, EventKind::ConceptDrift, "chiller-1").ok_or_else(|| anyhow!("no drift raised"))?;
    ensure!(drift_at >= 3000 && drift_at - 3000 <= 40, "drift detected at {drift_at}");
    ensure!(first_event(&drift, EventKind::Fault, "chiller-1").is_none(), "drift also reported as fault");
    Ok(format!(
        "quiet: 0 events; noise on {noisy_points} points: {} events (rate {fp_rate:.5}); fault +{}; drift +{}",
        noisy.events.len(),
        fault_at - 3000,
        drift_at - 3000
    ))
}

// ---------------------------------------------------------------------------
// Optimizer

struct Table {
    results: BTreeMap<Vec<u64>, Evaluation>,
}

impl Evaluator for Table {
    fn evaluate(&self, sp: &[f64]) -> Result<Evaluation, String> {
        let key: Vec<u64> = sp.iter().map(|v| v.to_bits()).collect();
        self.results.get(&key).copied().ok_or_else(|| format!("no entry for {sp:?}"))
    }
}

/// Every schedule in the grid, windows varying slowest-first.
fn candidates(grid: &[f64], windows: usize) -> Vec<Vec<f64>> {
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();
    let mut out = vec![vec![]];
    for _ in 0..windows {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                sorted.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(*v);
                    p
                })
            })
            .collect();
    }
    out
}

/// Exhaustive argmin: lowest energy among comfortable schedules; ties go
/// to the schedule whose first differing window has the lower setpoint.
fn brute_force(space: &SearchSpace, eval: &dyn Evaluator, min_comfort: f64) -> Result<Option<(Vec<f64>, f64)>> {
    let mut best: Option<(Vec<f64>, f64)> = None;
    for c in candidates(&space.grid, space.windows.len()) {
        let e = eval.evaluate(&c).map_err(|e| anyhow!(e))?;
        if e.comfort_fraction < min_comfort {
            continue;
        }
        let take = match &best {
            None => true,
            Some((bc, be)) => e.energy_kwh < *be || (e.energy_kwh == *be && c < *bc),
        };
        if take {
            best = Some((c, e.energy_kwh));
        }
    }
    Ok(best)
}

fn windows(n: usize) -> Vec<HourWindow> {
    (0..n)
        .map(|i| HourWindow {
            start_hour: 24.0 * i as f64 / n as f64,
            end_hour: if i + 1 == n { 24.0 } else { 24.0 * (i + 1) as f64 / n as f64 },
        })
        .collect()
}

fn check_against_oracle(space: &SearchSpace, eval: &dyn Evaluator, cfg: &OptimizerConfig) -> Result<bool> {
    let got = optimize(space, eval, None, cfg, 0)?;
    let want = brute_force(space, eval, cfg.min_comfort)?;
    match (got, want) {
        (OptOutcome::Found(s), Some((sp, e))) => {
            ensure!(s.setpoints() == sp, "optimizer chose {:?}, oracle {sp:?}", s.setpoints());
            ensure!(s.objective_value == e, "objective {} vs {e}", s.objective_value);
            Ok(true)
        }
        (OptOutcome::Infeasible { .. }, None) => Ok(false),
        (g, w) => bail!("optimizer {g:?} vs oracle {w:?}"),
    }
}

fn optimizer() -> Result<String> {
    let cfg = OptimizerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let mut synthetic = 0;
    let mut infeasible = 0;
    for _ in 0..400 {
        let nw = rng.random_range(1..=3usize);
        let max_grid = (1..=64usize).rev().find(|g| g.pow(nw as u32) <= cfg.budget).unwrap();
        let ng = rng.random_range(1..=max_grid);
        let mut grid: Vec<f64> = (0..ng).map(|i| 5.0 + i as f64 * 0.5).collect();
        for i in (1..grid.len()).rev() {
            grid.swap(i, rng.random_range(0..=i));
        }
        let space = SearchSpace {
            system: "s".into(),
            actuator: "s.setpoint".into(),
            unit: "°C".into(),
            windows: windows(nw),
            grid: grid.clone(),
            safety: false,
        };
        let results = candidates(&grid, nw)
            .into_iter()
            .map(|c| {
                let key = c.iter().map(|v| v.to_bits()).collect();
                let eval = Evaluation {
                    energy_kwh: rng.random_range(0..4) as f64,
                    comfort_fraction: if rng.random_bool(0.7) { 1.0 } else { 0.5 },
                };
                (key, eval)
            })
            .collect();
        if !check_against_oracle(&space, &Table { results }, &cfg)? {
            infeasible += 1;
        }
        synthetic += 1;
    }

    let reference = BuildingConfig::reference();
    let mut b = Building::in_memory(reference.clone(), ScenarioScript::empty())?;
    b.run(reference.runtime.probe_ticks)?;
    let mut twins = 0;
    for space in reference.search_spaces() {
        ensure!(space.size() <= cfg.budget, "configured grid of {} exceeds the budget", space.size());
        let eval = TwinEvaluator::new(b.world(), space.clone(), cfg.horizon_ticks);
        ensure!(check_against_oracle(&space, &eval, &cfg)?, "reference space {} infeasible", space.system);
        twins += 1;
    }

    let drift: ScenarioScript = serde_json::from_slice(&std::fs::read(fixture("drift_scenario.json"))?)?;
    let mut b = Building::in_memory(reference.clone(), drift)?;
    b.run(3000)?;
    let before: ParameterSchedule = b
        .schedules()
        .get("chiller-1")
        .cloned()
        .ok_or_else(|| anyhow!("no pre-drift schedule"))?;
    let after = loop {
        b.step()?;
        if let Some(s) = b.schedules().get("chiller-1").filter(|s| s.established_at > before.established_at) {
            break s.clone();
        }
        ensure!(b.tick() < 3200, "no reoptimization after drift");
    };
    let space = reference
        .search_spaces()
        .into_iter()
        .find(|s| s.system == "chiller-1")
        .unwrap();
    let twin = TwinEvaluator::new(b.world(), space.clone(), cfg.horizon_ticks);
    let (best, best_e) = brute_force(&space, &twin, cfg.min_comfort)?.ok_or_else(|| anyhow!("drifted space infeasible"))?;
    let pre_e = twin.evaluate(&before.setpoints()).map_err(|e| anyhow!(e))?.energy_kwh;
    let post_e = twin.evaluate(&after.setpoints()).map_err(|e| anyhow!(e))?.energy_kwh;
    ensure!(after.setpoints() == best, "post-drift schedule {:?} is not the argmin {best:?}", after.setpoints());
    let gain = (pre_e - post_e) / pre_e;
    let attainable = (pre_e - best_e) / pre_e;
    ensure!(attainable >= 0.05, "brute force only reaches {:.2}%", attainable * 100.0);
    ensure!(gain >= 0.05, "improvement {:.2}%", gain * 100.0);
    Ok(format!(
        "{synthetic} synthetic grids ({infeasible} infeasible) and {twins} reference grid(s) match the exhaustive oracle; drift: {:?} -> {:?}, {pre_e:.1} -> {post_e:.1} kWh ({:.1}% saved)",
        before.setpoints(),
        after.setpoints(),
        gain * 100.0
    ))
}

// ---------------------------------------------------------------------------
// Golden run

fn golden(tmp: &Path) -> Result<String> {
    let out = tmp.join("golden");
    let s = run(&out, Some(&fixture("golden_scenario.json")), None, 4800)?;
    let actual: Vec<String> = std::fs::read_to_string(out.join("timeline.jsonl"))?
        .lines()
        .map(|l| {
            let e: bsmart_core::runtime::TimelineEntry = serde_json::from_str(l)?;
            let kind = serde_json::to_value(e.kind)?;
            Ok(format!("{}\t{}\t{}", e.tick, kind.as_str().unwrap_or_default(), e.subject))
        })
        .collect::<Result<_>>()?;
    let expected: Vec<String> = std::fs::read_to_string(fixture("golden_timeline.tsv"))?
        .lines()
        .map(str::to_string)
        .collect();
    if let Some(i) = (0..actual.len().max(expected.len())).find(|&i| actual.get(i) != expected.get(i)) {
        bail!("timeline diverges at line {}: got {:?}, golden {:?}", i + 1, actual.get(i), expected.get(i));
    }

    let ticket_to = |actor: &str| s.tickets.iter().any(|t| t.actor_id == actor);
    ensure!(ticket_to("maintenance-chiller"), "no chiller maintenance ticket");
    for a in ["maintenance-power", "smart-grid", "tenants"] {
        ensure!(ticket_to(a), "no {a} notification");
    }
    let has = |tick_from: u64, kind: &str, subject: &str| {
        actual.iter().any(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            f[0].parse::<u64>().unwrap_or(0) >= tick_from && f[1] == kind && f[2].starts_with(subject)
        })
    };
    ensure!(has(3001, "ActuatorCommand", "gen-1.run=1"), "generator not started");
    let interfacing_at = s
        .mode_history
        .iter()
        .find(|e| e.to == Mode::Interfacing)
        .map(|e| e.tick)
        .ok_or_else(|| anyhow!("never entered Interfacing"))?;
    let during: Vec<&u64> = s
        .events
        .iter()
        .map(|e| &e.event.detected_at)
        .filter(|t| **t > interfacing_at)
        .collect();
    ensure!(!during.is_empty(), "no detection while Interfacing");
    let repaired = s
        .events
        .iter()
        .find(|e| e.event.target == "chiller-1")
        .and_then(|e| e.resolved_at)
        .ok_or_else(|| anyhow!("chiller fault not resolved"))?;
    ensure!(has(repaired, "OptimizationCompleted", "chiller-1"), "no post-repair optimization");
    ensure!(has(repaired, "BaselineUpdated", ""), "no OCx baseline update");
    ensure!(s.final_mode.mode == Mode::DetectingChange, "final mode {:?}", s.final_mode.mode);
    Ok(format!(
        "{} timeline entries match the golden journal; {} tickets; chiller repaired at {repaired}",
        actual.len(),
        s.tickets.len()
    ))
}

// ---------------------------------------------------------------------------
// SOCx

fn socx(tmp: &Path) -> Result<String> {
    let out = tmp.join("socx");
    let probe = BuildingConfig::reference().runtime.probe_ticks;
    let s = run(&out, None, None, probe + 1)?;
    ensure!(s.final_mode.mode == Mode::DetectingChange, "mode {:?} after commissioning", s.final_mode.mode);
    let modes: Vec<Mode> = s.mode_history.iter().filter(|e| e.outcome == Outcome::Applied).map(|e| e.to).collect();
    ensure!(modes == [Mode::Optimizing, Mode::DetectingChange], "mode path {modes:?}");
    let points;
    {
        let bkr = open_bkr(&out)?;
        let report: CommissioningReport = bkr
            .hist
            .records::<CommissioningReport>(COMMISSIONING_LOG)?
            .pop()
            .ok_or_else(|| anyhow!("no commissioning report"))?;
        points = report.items.len();
        ensure!(points == 50, "{points} points discovered");
        ensure!(report.complete && report.passed == 50, "report {}/{} passed", report.passed, points);
        for i in &report.items {
            ensure!(!i.class.is_empty() && i.confidence > 0.0, "{} unclassified", i.point_id);
            ensure!(i.range.is_some() && i.range_ok, "{} failed range validation", i.point_id);
            ensure!(i.baseline.sample_count > 0, "{} has no baseline", i.point_id);
            ensure!(i.registered, "{} not registered", i.point_id);
        }
        let reg = bkr.registry();
        ensure!(reg.len() == 50, "registry holds {} devices", reg.len());
        for (p, d) in reg.points() {
            ensure!(d.baseline.sample_count > 0 && d.baseline.mean.is_finite(), "{p} baseline empty");
        }
    }
    std::fs::remove_dir_all(out.join("bkr").join("hist"))?;
    let restarted = run(&out, None, None, 0)?;
    ensure!(
        restarted.final_mode.mode == Mode::Initializing,
        "restart without history is {:?}",
        restarted.final_mode.mode
    );
    let again = run(&out, None, None, probe + 1)?;
    ensure!(again.final_mode.mode == Mode::DetectingChange, "recommissioning ended in {:?}", again.final_mode.mode);
    Ok(format!(
        "{points}/50 devices discovered, classified, range-checked, baselined and registered; history deleted -> Initializing -> recommissioned"
    ))
}

// ---------------------------------------------------------------------------
// ETL / retention

fn etl(tmp: &Path) -> Result<String> {
    let out = tmp.join("etl");
    let days = 3;
    let tph = 60;
    run(&out, None, None, days * 1440)?;
    let bkr = open_bkr(&out)?;
    let latest = bkr.rt.latest().map(|v| v.tick).ok_or_else(|| anyhow!("empty real-time zone"))?;
    let first = bkr.rt.first_tick().unwrap();
    ensure!(latest == days * 1440 - 1, "latest vector at {latest}");
    ensure!(
        bkr.rt.len() == 1440 && latest - first + 1 == 1440,
        "real-time zone holds {} vectors over ticks {first}..={latest}",
        bkr.rt.len()
    );
    let exported = bkr.hist.watermark().exported_to;
    ensure!(exported == days * 1440, "watermark at {exported}");
    let reports: Vec<EtlReport> = bkr.hist.records(ETL_REPORT_LOG)?;
    ensure!(!reports.is_empty(), "no ETL runs recorded");
    ensure!(reports.iter().all(|r| r.conserved()), "an ETL run lost values");
    let vectors: u64 = reports.iter().map(|r| r.vectors).sum();
    ensure!(
        vectors == exported - reports[0].from_tick,
        "{vectors} vectors exported over {} ticks",
        exported - reports[0].from_tick
    );
    let read: u64 = reports.iter().map(|r| r.values_read).sum();
    let aggregated: u64 = bkr.hist.aggregates().iter().map(|a| a.count).sum();
    ensure!(read == aggregated, "{read} values read, {aggregated} aggregated");
    let mut per_hour: BTreeMap<u64, u64> = BTreeMap::new();
    let mut per_point: BTreeMap<&str, u64> = BTreeMap::new();
    for a in bkr.hist.aggregates() {
        ensure!(a.count == tph, "hour {} of {} holds {} samples", a.hour, a.point_id, a.count);
        *per_hour.entry(a.hour).or_default() += a.count;
        *per_point.entry(&a.point_id).or_default() += a.count;
    }
    let monitored = exported - BuildingConfig::reference().runtime.probe_ticks;
    ensure!(per_point.len() == 50, "{} points aggregated", per_point.len());
    for (p, n) in &per_point {
        ensure!(*n == monitored, "{p}: {n} samples over {monitored} monitored ticks");
    }

    let retained: Vec<StateVector> = bkr.rt.iter().cloned().collect();
    let clean = tmp.join("etl-clean");
    let crashy = tmp.join("etl-crash");
    let cfg = BkrConfig::default();
    let mut a = Bkr::open(&clean, cfg.clone())?.0;
    let mut b = Bkr::open(&crashy, cfg.clone())?.0;
    let mut crashes = 0;
    for (i, chunk) in retained.chunks(4 * tph as usize).enumerate() {
        for sv in chunk {
            a.write_rt(sv)?;
            b.write_rt(sv)?;
        }
        let now = chunk.last().unwrap().tick + 1;
        etl_cycle(&mut a, tph, now)?;
        if i % 2 == 0 {
            b.hist.fail_after_batches(Some(1 + i % 3));
            if etl_cycle(&mut b, tph, now).is_err() {
                crashes += 1;
            }
            drop(b);
            b = Bkr::open(&crashy, cfg.clone())?.0;
        }
        etl_cycle(&mut b, tph, now)?;
    }
    ensure!(crashes > 0, "no crash was injected");
    let key = |bkr: &Bkr| -> Result<String> {
        let mut rows = bkr.hist.aggregates().to_vec();
        rows.sort_by(|x, y| (x.hour, &x.point_id).cmp(&(y.hour, &y.point_id)));
        Ok(serde_json::to_string(&(rows, bkr.hist.watermark()))?)
    };
    ensure!(key(&a)? == key(&b)?, "crash-resumed aggregates differ from crash-free ones");
    ensure!(a.rt.len() == b.rt.len(), "real-time zones differ after resume");
    Ok(format!(
        "RT spans ticks {first}..={latest}; {} ETL runs, {vectors} vectors -> {aggregated} samples in {} hours; {crashes} crashes resumed identically",
        reports.len(),
        per_hour.len()
    ))
}

// ---------------------------------------------------------------------------
// Legacy

fn legacy() -> Result<String> {
    let mapping = fixture("legacy_mapping.json");
    let dump = fixture("legacy_dump.jsonl");
    let mut base = vec![
        "replay-legacy",
        "--mapping",
        mapping.to_str().unwrap(),
        "--dump",
        dump.to_str().unwrap(),
        "--vectors",
    ];
    let l = bsmart(&base)?;
    ensure!(l.ok, "legacy replay failed: {}", l.stderr);
    base.push("--native");
    let n = bsmart(&base)?;
    ensure!(n.ok, "native replay failed: {}", n.stderr);
    let lv: serde_json::Value = serde_json::from_str(&l.stdout)?;
    let nv: serde_json::Value = serde_json::from_str(&n.stdout)?;
    ensure!(lv["emission"] == "Legacy" && nv["emission"] == "Native", "emission tags wrong");
    ensure!(lv["events"] == nv["events"], "detections differ");
    ensure!(lv["vectors"] == nv["vectors"], "state vectors differ");
    let events = lv["events"].as_array().cloned().unwrap_or_default();
    let kinds: BTreeSet<String> = events.iter().filter_map(|e| e["kind"].as_str().map(str::to_string)).collect();
    ensure!(
        kinds.contains("Fault") && kinds.contains("ConceptDrift"),
        "fixture should yield a fault and a drift, got {kinds:?}"
    );
    Ok(format!(
        "{} events and {} vectors identical; {} duplicates, {} quarantined rows",
        events.len(),
        lv["vectors"].as_array().map_or(0, Vec::len),
        lv["duplicates"],
        lv["quarantined"]
    ))
}

// ---------------------------------------------------------------------------

type Check<'a> = Box<dyn Fn() -> Result<String> + 'a>;

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let tmp = tempfile::tempdir().expect("temp dir");
    let t = tmp.path();
    let criteria: Vec<(&str, Duration, Check)> = vec![
        ("state-machine conformance", Duration::from_secs(1), Box::new(state_machine)),
        ("broker semantics", Duration::from_secs(30), Box::new(broker_semantics)),
        ("pipeline completeness", Duration::from_secs(60), Box::new(pipeline_completeness)),
        ("detection dichotomy and quiescence", Duration::from_secs(300), Box::new(|| detection(t))),
        ("optimizer oracle equivalence", Duration::from_secs(300), Box::new(optimizer)),
        ("scenario golden run", Duration::from_secs(120), Box::new(|| golden(t))),
        ("SOCx lifecycle", Duration::from_secs(300), Box::new(|| socx(t))),
        ("ETL/retention", Duration::from_secs(300), Box::new(|| etl(t))),
        ("legacy integration", Duration::from_secs(60), Box::new(legacy)),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(&check))
            .unwrap_or_else(|_| Err(anyhow!("panicked")))
            .and_then(|detail| {
                let took = started.elapsed();
                ensure!(took <= budget, "took {took:.1?}, budget {budget:?}");
                Ok(detail)
            });
        let took = started.elapsed();
        match outcome {
            Ok(detail) => println!("PASS  {name} ({took:.1?}): {detail}"),
            Err(e) => {
                failed += 1;
                println!("FAIL  {name} ({took:.1?}): {e:#}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
