// Acceptance checks. Runs as a plain binary so every criterion prints one
// PASS or FAIL line even when an earlier one fails.

// `ensure!(x >= t)` must fail on NaN, which `x < t` would not.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::HashMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use loadscope_core::analyze::{analyze_events, analyze_path, AnalysisConfig, Analyzer};
use loadscope_core::context::ContextTree;
use loadscope_core::profile::{merge, merge_all, CanonicalContext, Canonicalizer, FrameKind, Profile};
use loadscope_core::sampler::SamplingConfig;
use loadscope_core::scope::{resolve_scope, ScopeQuery};
use loadscope_core::spatial::ObjectKey;
use loadscope_core::temporal::RedundancyCounters;
use loadscope_core::trace::{read_trace, write_trace, SourceMap, TraceEvent};
use loadscope_core::workload::{
    expected_redundancy, generate, oracle_replay, write_binary, Scenario, ScenarioName,
};

const ORACLE_SEEDS: u64 = 100;
const ORACLE_LOADS: u64 = 10_000;
const ORACLE_TIME_LIMIT: Duration = Duration::from_secs(60);
const SCOPE_TRACES: u64 = 200;
const ORACLE_TOLERANCE: f64 = 0.02;
const LINEAR_SEARCH_MIN: f64 = 0.95;
const FORWARD_COPY_MIN: f64 = 0.9;
const SPARSE_ZEROS_MIN: f64 = 0.85;
const APPROX_DRIFT_MIN: f64 = 0.99;
const SAMPLING_TOLERANCE: f64 = 0.10;
const SMALL_WINDOW: (u64, u64) = (1_000, 99_000);
const LARGE_WINDOW: (u64, u64) = (60_000, 99_000);
const MERGE_TRIPLES: u64 = 100;
const PLUMBING_EVENTS: u64 = 10_000_000;
const PLUMBING_TIME_LIMIT: Duration = Duration::from_secs(120);

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Every profile produced by the run, for the conservation criterion.
#[derive(Default)]
struct Seen {
    profiles: Vec<(String, Profile)>,
}

impl Seen {
    fn keep(&mut self, label: impl Into<String>, p: &Profile) {
        self.profiles.push((label.into(), p.clone()));
    }
}

/// Per-load engine verdict with the scope in canonical form.
#[derive(Debug, PartialEq)]
struct Verdict {
    position: u64,
    temporal: bool,
    scope: Option<CanonicalContext>,
    spatial: Option<(ObjectKey, bool)>,
}

fn engine(
    events: &[TraceEvent],
    map: &SourceMap,
    epsilon: f64,
    budget: u32,
    scopes: bool,
) -> (Profile, Vec<Verdict>) {
    let config = AnalysisConfig {
        epsilon,
        scope_budget: budget,
        ..AnalysisConfig::full()
    };
    let mut a = Analyzer::new(map.clone(), config).unwrap();
    let mut out = Vec::new();
    for ev in events {
        if let Some(o) = a.feed(ev).unwrap() {
            let t = o.temporal.unwrap();
            let sp = o.spatial.unwrap();
            let scope = t.scope.filter(|_| scopes).map(|h| {
                Canonicalizer::new(a.tree(o.thread).unwrap(), a.source_map())
                    .resolve(h)
                    .unwrap()
            });
            let spatial = sp
                .object
                .map(|(_, k)| (a.registry().key(k).clone(), sp.redundant));
            out.push(Verdict {
                position: o.position,
                temporal: t.redundant,
                scope,
                spatial,
            });
        }
    }
    (a.finish().unwrap(), out)
}

fn mixed(seed: u64, loads: u64) -> Scenario {
    Scenario::new(ScenarioName::RandomMixed)
        .with("loads", loads)
        .with("seed", seed)
        .with("addresses", 1 + seed * 7 % 64)
        .with("values", 1 + seed % 8)
}

fn profile(s: &Scenario, config: AnalysisConfig) -> Profile {
    let (events, map) = generate(s).unwrap();
    analyze_events(&events, &map, config).unwrap()
}

fn full_with_epsilon(epsilon: f64) -> AnalysisConfig {
    AnalysisConfig {
        epsilon,
        ..AnalysisConfig::full()
    }
}

fn sampled(we: u64, wd: u64) -> AnalysisConfig {
    AnalysisConfig {
        sampling: SamplingConfig::windows(we, wd),
        ..AnalysisConfig::full()
    }
}

fn instance_ratio<'a>(rows: impl IntoIterator<Item = &'a RedundancyCounters>) -> f64 {
    let (mut r, mut t) = (0u64, 0u64);
    for c in rows {
        r += c.redundant_instances;
        t += c.total_instances;
    }
    r as f64 / t as f64
}

/// Scope of the temporal pair with the most redundant bytes.
fn top_scope(p: &Profile) -> Option<String> {
    let (k, _) = p
        .pairs
        .iter()
        .max_by_key(|(_, c)| c.redundant_bytes_precise + c.redundant_bytes_approx)?;
    let f = k.scope.as_ref()?.leaf()?;
    (f.kind == FrameKind::Loop).then(|| format!("{}:{}", f.file, f.line))
}

struct OracleRun {
    elapsed: Duration,
    temporal_mismatch: Option<String>,
    spatial_mismatch: Option<String>,
    loads: usize,
}

fn oracle_runs(seen: &mut Seen) -> OracleRun {
    let start = Instant::now();
    let mut run = OracleRun {
        elapsed: Duration::ZERO,
        temporal_mismatch: None,
        spatial_mismatch: None,
        loads: 0,
    };
    for seed in 0..ORACLE_SEEDS {
        let (events, map) = generate(&mixed(seed, ORACLE_LOADS)).unwrap();
        let oracle = oracle_replay(&events, &map, 0.01, 1).unwrap();
        let (p, verdicts) = engine(&events, &map, 0.01, 1, false);
        run.loads += verdicts.len();
        let o = &oracle.profile;
        let temporal_ok = verdicts.len() == oracle.verdicts.len()
            && verdicts
                .iter()
                .zip(&oracle.verdicts)
                .all(|(e, v)| e.position == v.position && e.temporal == v.temporal_redundant)
            && p.pairs == o.pairs
            && p.temporal_totals == o.temporal_totals;
        let spatial_ok = verdicts.len() == oracle.verdicts.len()
            && verdicts
                .iter()
                .zip(&oracle.verdicts)
                .all(|(e, v)| e.spatial == v.spatial)
            && p.objects == o.objects
            && p.spatial_totals == o.spatial_totals;
        if !temporal_ok && run.temporal_mismatch.is_none() {
            run.temporal_mismatch = Some(format!("seed {seed}"));
        }
        if !spatial_ok && run.spatial_mismatch.is_none() {
            run.spatial_mismatch = Some(format!("seed {seed}"));
        }
        seen.keep(format!("random_mixed seed {seed}"), &p);
    }
    run.elapsed = start.elapsed();
    run
}

fn criterion_1(run: &OracleRun) -> Outcome {
    if let Some(m) = &run.temporal_mismatch {
        return Err(format!("temporal mismatch at {m}"));
    }
    ensure!(
        run.elapsed < ORACLE_TIME_LIMIT,
        "took {:.1?}, limit {:?}",
        run.elapsed,
        ORACLE_TIME_LIMIT
    );
    Ok(format!(
        "{ORACLE_SEEDS} traces, {} loads, engine+oracle {:.1?}",
        run.loads, run.elapsed
    ))
}

fn criterion_2(run: &OracleRun) -> Outcome {
    if let Some(m) = &run.spatial_mismatch {
        return Err(format!("spatial mismatch at {m}"));
    }
    Ok(format!(
        "{ORACLE_SEEDS} traces, verdicts and object counters identical"
    ))
}

// Hand-built tree: main -> loop1 -> loop2 -> load, with the clock values of
// the two textbook cases.
fn criterion_3(seen: &mut Seen) -> Outcome {
    let mut nesting = HashMap::new();
    nesting.insert(1, None);
    nesting.insert(2, Some(1));
    let mut t = ContextTree::with_loop_nesting(nesting);
    t.on_call(0);
    let mut stamps = Vec::new();
    let l1 = t.on_loop_head(1);
    stamps.push(t.now());
    let l2 = t.on_loop_head(2);
    stamps.push(t.now());
    let (c, t_old) = t.current_load_context(10);
    t.on_loop_head(2);
    stamps.push(t.now());
    let (c5, t5) = t.current_load_context(11);
    ensure!(
        stamps == [1, 2, 4] && t_old == 3 && t5 == 5,
        "clock values {stamps:?} {t_old} {t5}"
    );
    let inner = resolve_scope(
        &ScopeQuery {
            c_old: c,
            t_old,
            c_new: c5,
            t_new: t5,
        },
        &t,
    )
    .unwrap();
    ensure!(
        inner == Some(l2),
        "T_old=3, T_new=5 gave {inner:?}, want inner loop"
    );

    t.on_loop_head(2);
    t.current_load_context(11);
    t.on_loop_head(1);
    t.on_loop_head(2);
    let (c10, t10) = t.current_load_context(10);
    ensure!(t10 == 10 && c10 == c, "second trip load at T={t10}");
    let outer = resolve_scope(
        &ScopeQuery {
            c_old: c,
            t_old,
            c_new: c10,
            t_new: t10,
        },
        &t,
    )
    .unwrap();
    ensure!(
        outer == Some(l1),
        "T_old=3, T_new=10 gave {outer:?}, want outer loop"
    );

    let mut checked = 0usize;
    for seed in 0..SCOPE_TRACES {
        let s = mixed(1000 + seed, 2_000).with("loop_weight", 10 + seed % 40);
        let (events, map) = generate(&s).unwrap();
        let budget = if seed % 2 == 0 { 1 } else { u32::MAX };
        let oracle = oracle_replay(&events, &map, 0.01, budget).unwrap();
        let (p, verdicts) = engine(&events, &map, 0.01, budget, true);
        for (e, o) in verdicts.iter().zip(&oracle.verdicts) {
            ensure!(
                e.scope == o.temporal_scope,
                "seed {seed} load {}: scope differs",
                e.position
            );
            checked += e.scope.is_some() as usize;
        }
        ensure!(p == oracle.profile, "seed {seed}: profile differs");
        seen.keep(format!("scope seed {seed}"), &p);
    }
    Ok(format!(
        "worked examples exact; {SCOPE_TRACES} nested-loop traces, {checked} scoped loads match"
    ))
}

fn criterion_4(seen: &mut Seen) -> Outcome {
    let p = profile(
        &Scenario::new(ScenarioName::AdjacentEqual),
        AnalysisConfig::full(),
    );
    seen.keep("adjacent_equal", &p);
    let key = ObjectKey::Static { name: "A".into() };
    let a = &p.objects.get(&key).ok_or("object A missing")?.counters;
    let f = p.object_fraction(&key).unwrap().precise.value;
    ensure!(
        a.redundant_instances == 2 && a.total_instances == 4,
        "{} of {}",
        a.redundant_instances,
        a.total_instances
    );
    ensure!(f == 0.5, "object fraction {f}");
    Ok("2 of 4 instances, object fraction 0.5".into())
}

fn close(label: &str, got: f64, want: f64) -> Result<(), String> {
    ensure!(
        (got - want).abs() <= ORACLE_TOLERANCE,
        "{label}: {got:.4} vs oracle {want:.4}"
    );
    Ok(())
}

fn criterion_5(seen: &mut Seen) -> Outcome {
    let mut notes = Vec::new();

    let s = Scenario::new(ScenarioName::LinearSearch);
    let p = profile(&s, AnalysisConfig::full());
    let want = expected_redundancy(&s, 0.01, 1).unwrap().profile;
    let r = p.temporal_fraction().precise.value;
    close("linear_search", r, want.temporal_fraction().precise.value)?;
    ensure!(
        r >= LINEAR_SEARCH_MIN,
        "linear_search {r:.4} < {LINEAR_SEARCH_MIN}"
    );
    let scope = top_scope(&p);
    ensure!(
        scope.as_deref() == Some("main.c:10"),
        "linear_search scope {scope:?}"
    );
    seen.keep("linear_search", &p);
    notes.push(format!("linear_search {r:.4}"));

    let s = Scenario::new(ScenarioName::ForwardCopy).with("reps", 100);
    let p = profile(&s, AnalysisConfig::full());
    let want = expected_redundancy(&s, 0.01, 1).unwrap().profile;
    let r = p.temporal_fraction().precise.value;
    close("forward_copy", r, want.temporal_fraction().precise.value)?;
    ensure!(r >= FORWARD_COPY_MIN, "forward_copy {r:.4} < {FORWARD_COPY_MIN}");
    let scope = top_scope(&p);
    ensure!(
        scope.as_deref() == Some("main.c:30"),
        "forward_copy scope {scope:?}"
    );
    seen.keep("forward_copy", &p);
    notes.push(format!("forward_copy {r:.4}"));

    let s = Scenario::new(ScenarioName::SparseZeros).with("zero_density", 0.9);
    let p = profile(&s, AnalysisConfig::full());
    let want = expected_redundancy(&s, 0.01, 1).unwrap().profile;
    let r = instance_ratio(p.objects.values().map(|o| &o.counters));
    close(
        "sparse_zeros",
        r,
        instance_ratio(want.objects.values().map(|o| &o.counters)),
    )?;
    ensure!(r >= SPARSE_ZEROS_MIN, "sparse_zeros {r:.4} < {SPARSE_ZEROS_MIN}");
    seen.keep("sparse_zeros", &p);
    notes.push(format!("sparse_zeros {r:.4}"));

    let s = Scenario::new(ScenarioName::ApproxDrift)
        .with("step", 0.005)
        .with("reps", 200);
    let p = profile(&s, full_with_epsilon(0.01));
    let want = expected_redundancy(&s, 0.01, 1).unwrap().profile;
    let r = p.temporal_fraction().approx.value;
    close("approx_drift", r, want.temporal_fraction().approx.value)?;
    ensure!(r >= APPROX_DRIFT_MIN, "approx_drift {r:.4} < {APPROX_DRIFT_MIN}");
    let tight = profile(&s, full_with_epsilon(0.001));
    let r_tight = tight.temporal_fraction().approx.value;
    ensure!(r_tight == 0.0, "approx_drift at epsilon 0.001 is {r_tight}");
    seen.keep("approx_drift", &p);
    seen.keep("approx_drift tight", &tight);
    notes.push(format!("approx_drift {r:.4} / {r_tight}"));

    Ok(notes.join(", "))
}

fn criterion_6(seen: &mut Seen) -> Outcome {
    let mut notes = Vec::new();
    // Paired loads a few dozen to a few hundred instructions apart.
    let short = [
        Scenario::new(ScenarioName::CalleeSpill).with("calls", 200_000),
        Scenario::new(ScenarioName::ForwardCopy)
            .with("len", 64)
            .with("reps", 20_000),
        Scenario::new(ScenarioName::LinearSearch)
            .with("n", 100)
            .with("queries", 20_000),
    ];
    for s in &short {
        let full = profile(s, AnalysisConfig::full());
        let samp = profile(s, sampled(SMALL_WINDOW.0, SMALL_WINDOW.1));
        let (a, b) = (
            full.temporal_fraction().precise.value,
            samp.temporal_fraction().precise.value,
        );
        ensure!(
            (a - b).abs() <= SAMPLING_TOLERANCE,
            "{}: sampled {b:.4} vs full {a:.4}",
            s.name
        );
        seen.keep(format!("{} full", s.name), &full);
        seen.keep(format!("{} sampled", s.name), &samp);
        notes.push(format!("{} {b:.3}/{a:.3}", s.name));
    }

    let s = Scenario::new(ScenarioName::ApproxDrift)
        .with("len", 1_500)
        .with("reps", 300);
    let full = profile(&s, AnalysisConfig::full())
        .temporal_fraction()
        .approx
        .value;
    let mut by_window = Vec::new();
    for we in [SMALL_WINDOW.0, 3_000, 10_000, 30_000, LARGE_WINDOW.0] {
        let p = profile(&s, sampled(we, SMALL_WINDOW.1));
        seen.keep(format!("approx_drift WE={we}"), &p);
        by_window.push((we, p.temporal_fraction().approx.value));
    }
    let small = by_window[0].1;
    let large = by_window.last().unwrap().1;
    ensure!(
        full - small > SAMPLING_TOLERANCE,
        "long reuse not underestimated: {small:.4} vs {full:.4}"
    );
    ensure!(
        full - large <= SAMPLING_TOLERANCE,
        "WE={} gives {large:.4} vs {full:.4}",
        LARGE_WINDOW.0
    );
    ensure!(
        by_window.windows(2).all(|w| w[0].1 <= w[1].1),
        "not monotone in WE: {by_window:?}"
    );
    notes.push(format!(
        "approx_drift full {full:.3}, WE=1e3 {small:.3}, WE=6e4 {large:.3}"
    ));
    Ok(notes.join(", "))
}

fn criterion_7(seen: &mut Seen) -> Outcome {
    let empty = Profile {
        threads: 0,
        ..Profile::default()
    };
    let pool: Vec<Profile> = (0..MERGE_TRIPLES + 2)
        .map(|i| profile(&mixed(5000 + i, 400), AnalysisConfig::full()))
        .collect();
    for i in 0..MERGE_TRIPLES as usize {
        let (a, b, c) = (&pool[i], &pool[i + 1], &pool[i + 2]);
        ensure!(
            merge(a.clone(), b.clone()) == merge(b.clone(), a.clone()),
            "triple {i}: not commutative"
        );
        let left = merge(merge(a.clone(), b.clone()), c.clone());
        ensure!(
            left == merge(a.clone(), merge(b.clone(), c.clone())),
            "triple {i}: not associative"
        );
        ensure!(
            merge_all(vec![a.clone(), b.clone(), c.clone()]) == left,
            "triple {i}: balanced merge differs"
        );
        ensure!(
            merge(a.clone(), empty.clone()) == *a,
            "triple {i}: empty is not an identity"
        );
        seen.keep(format!("merge triple {i}"), &left);
    }
    for name in ScenarioName::ALL {
        let one = profile(&Scenario::new(name), AnalysisConfig::full());
        let two = profile(&Scenario::new(name).with("threads", 2), AnalysisConfig::full());
        ensure!(
            two == merge(one.clone(), one.clone()),
            "{name}: two threads do not double"
        );
        seen.keep(format!("{name} two threads"), &two);
    }
    Ok(format!(
        "{MERGE_TRIPLES} triples; two-thread doubling on all scenarios"
    ))
}

fn criterion_8(seen: &Seen) -> Outcome {
    for (label, p) in &seen.profiles {
        p.check_conservation().map_err(|e| format!("{label}: {e}"))?;
        for key in p.objects.keys() {
            let f = p.object_fraction(key).unwrap();
            for x in [f.precise.value, f.approx.value] {
                ensure!((0.0..=1.0).contains(&x), "{label}: object fraction {x}");
            }
        }
    }
    Ok(format!(
        "{} profiles conserve bytes and stay in range",
        seen.profiles.len()
    ))
}

fn criterion_9() -> Outcome {
    let (events, map) = generate(&mixed(77, 20_000)).unwrap();
    let mut buf = Vec::new();
    write_trace(&events, &map, &mut buf).unwrap();
    let (back, back_map) = read_trace(buf.as_slice()).map_err(|e| e.to_string())?;
    ensure!(back == events && back_map == map, "round trip differs");
    for cut in (0..buf.len()).step_by(97) {
        ensure!(
            read_trace(&buf[..cut]).is_err(),
            "truncation at {cut} not detected"
        );
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.lrt");
    // About 4 events per cell and step.
    let steps = PLUMBING_EVENTS / (4 * 65_536) + 2;
    let s = Scenario::new(ScenarioName::Stencil)
        .with("n", 65_536)
        .with("steps", steps);
    let n = write_binary(&s, std::io::BufWriter::new(std::fs::File::create(&path).unwrap())).unwrap();
    ensure!(n >= PLUMBING_EVENTS, "only {n} events");
    let start = Instant::now();
    let p = analyze_path(&path, AnalysisConfig::full()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    p.check_conservation()?;
    ensure!(elapsed < PLUMBING_TIME_LIMIT, "analyze took {elapsed:.1?}");
    Ok(format!(
        "round trip and truncation ok; {n} events analyzed in {elapsed:.1?} with full monitoring"
    ))
}

fn report(n: u32, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {n} [{tag}] {name}: {detail}");
    std::io::stdout().flush().unwrap();
    outcome.is_ok()
}

fn main() {
    let mut seen = Seen::default();
    let run = oracle_runs(&mut seen);
    let results = [
        report(1, "temporal oracle equivalence", || criterion_1(&run)),
        report(2, "spatial oracle equivalence", || criterion_2(&run)),
        report(3, "scope resolution", || criterion_3(&mut seen)),
        report(4, "adjacent equal values", || criterion_4(&mut seen)),
        report(5, "pattern thresholds", || criterion_5(&mut seen)),
        report(6, "sampling fidelity", || criterion_6(&mut seen)),
        report(7, "merge algebra", || criterion_7(&mut seen)),
        report(8, "conservation", || criterion_8(&seen)),
        report(9, "plumbing", criterion_9),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
