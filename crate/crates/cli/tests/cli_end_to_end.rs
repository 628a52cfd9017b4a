use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

#[path = "../../core/tests/common/schema.rs"]
mod schema;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_loadscope"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn loadscope")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen_and_analyze(dir: &Path, scenario: &str, params: &[&str], text: bool) -> PathBuf {
    let trace = dir.join(format!("{scenario}.trace"));
    let profile = dir.join(format!("{scenario}.json"));
    let mut args = vec!["gen", "--scenario", scenario, "-o", p(&trace)];
    for kv in params {
        args.extend(["--param", kv]);
    }
    if text {
        args.push("--text");
    }
    ok(&args);
    ok(&["analyze", p(&trace), "-o", p(&profile), "--no-sampling"]);
    profile
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_analyze_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let profile = gen_and_analyze(dir.path(), "linear_search", &["n=200", "queries=200"], false);
    let doc = read_json(&profile);
    schema::validate(&schema::load_schema("profile.schema.json"), &doc).unwrap();
    let r = doc["temporal"]["r_prog"]["precise"]["value"].as_f64().unwrap();
    assert!(r > 0.95, "linear search temporal fraction {r}");

    let text = ok(&["report", p(&profile)]);
    let text = String::from_utf8(text.stdout).unwrap();
    assert!(text.contains("search.c"), "{text}");

    let json = ok(&["report", p(&profile), "--format", "json", "--top", "3"]);
    let report: Value = serde_json::from_slice(&json.stdout).unwrap();
    schema::validate(&schema::load_schema("report.schema.json"), &report).unwrap();
    let rows = report["temporal"].as_array().unwrap();
    assert!(!rows.is_empty() && rows.len() <= 3);
    let bytes: Vec<u64> = rows
        .iter()
        .map(|r| r["redundant_bytes"].as_u64().unwrap())
        .collect();
    assert!(bytes.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn adjacent_equal_report_row() {
    let dir = tempfile::tempdir().unwrap();
    let profile = gen_and_analyze(dir.path(), "adjacent_equal", &[], false);
    let out = ok(&["report", p(&profile), "--format", "json"]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let top = &report["spatial"][0];
    assert_eq!(top["object"]["name"], "A");
    assert_eq!(top["object_fraction"].as_f64(), Some(0.5));
    assert_eq!(top["redundant_instances"], 2);
    assert_eq!(report["temporal"].as_array().unwrap().len(), 0);
}

#[test]
fn text_traces_are_detected() {
    let dir = tempfile::tempdir().unwrap();
    let bin_profile = gen_and_analyze(dir.path(), "stencil", &["n=64", "steps=3"], false);
    let bin_doc = read_json(&bin_profile);
    let sub = dir.path().join("text");
    std::fs::create_dir(&sub).unwrap();
    let text_profile = gen_and_analyze(&sub, "stencil", &["n=64", "steps=3"], true);
    assert_eq!(bin_doc, read_json(&text_profile));
}

#[test]
fn merging_a_profile_with_itself_doubles_counters() {
    let dir = tempfile::tempdir().unwrap();
    let profile = gen_and_analyze(dir.path(), "sparse_zeros", &["len=100"], false);
    let merged = dir.path().join("merged.json");
    ok(&["merge", p(&profile), p(&profile), "-o", p(&merged)]);
    let one = read_json(&profile);
    let two = read_json(&merged);
    schema::validate(&schema::load_schema("profile.schema.json"), &two).unwrap();
    assert_eq!(two["threads"], 2);
    for part in ["temporal", "spatial"] {
        for (k, v) in one[part]["totals"].as_object().unwrap() {
            assert_eq!(
                two[part]["totals"][k].as_u64(),
                Some(v.as_u64().unwrap() * 2),
                "{part}.{k}"
            );
        }
        assert_eq!(one[part]["r_prog"], two[part]["r_prog"]);
    }
}

#[test]
fn missing_input_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.trace");
    let out = run(&["analyze", p(&missing), "-o", p(&dir.path().join("x.json"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nope.trace"), "{err}");

    let out = run(&["report", p(&dir.path().join("absent.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.json"));
}

#[test]
fn truncated_trace_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.trace");
    ok(&[
        "gen",
        "--scenario",
        "callee_spill",
        "--param",
        "calls=20",
        "-o",
        p(&trace),
    ]);
    let bytes = std::fs::read(&trace).unwrap();
    std::fs::write(&trace, &bytes[..bytes.len() - 5]).unwrap();
    let out = run(&["analyze", p(&trace), "-o", p(&dir.path().join("x.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("t.trace"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&["analyze", "--bogus"]).status.code(), Some(2));
    assert_eq!(
        run(&["gen", "--scenario", "no_such", "-o", "x"]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["report", "p.json", "--format", "xml"]).status.code(),
        Some(2)
    );
    assert_eq!(run(&[]).status.code(), Some(2));
}

#[test]
fn bad_scenario_parameter_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "gen",
        "--scenario",
        "stencil",
        "--param",
        "width=3",
        "-o",
        p(&dir.path().join("s.trace")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("width") && err.contains("steps"), "{err}");
}

#[test]
fn sampling_flags_change_the_profile() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("d.trace");
    ok(&[
        "gen",
        "--scenario",
        "approx_drift",
        "--param",
        "len=200",
        "--param",
        "reps=20",
        "-o",
        p(&trace),
    ]);
    let full = dir.path().join("full.json");
    let sampled = dir.path().join("sampled.json");
    ok(&["analyze", p(&trace), "-o", p(&full), "--no-sampling"]);
    ok(&[
        "analyze",
        p(&trace),
        "-o",
        p(&sampled),
        "--window-enable",
        "100",
        "--window-disable",
        "900",
    ]);
    let total = |d: &Value| d["temporal"]["totals"]["total_fp_bytes"].as_u64().unwrap();
    let (f, s) = (read_json(&full), read_json(&sampled));
    assert!(total(&s) < total(&f));
    assert!(total(&s) > 0);
    let out = run(&[
        "analyze",
        p(&trace),
        "-o",
        p(&full),
        "--no-sampling",
        "--window-enable",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
