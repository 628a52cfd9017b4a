//! Shared fixtures for the benchmarks.

use loadscope_core::trace::{SourceMap, TraceEvent};
use loadscope_core::workload::{generate, write_binary, Scenario, ScenarioName};

/// Scenarios the pipeline benchmark runs, sized to roughly 10^5 events each.
pub fn scenarios() -> Vec<Scenario> {
    vec![
        Scenario::new(ScenarioName::LinearSearch)
            .with("n", 300)
            .with("queries", 300),
        Scenario::new(ScenarioName::Stencil)
            .with("n", 4096)
            .with("steps", 8),
        Scenario::new(ScenarioName::RandomMixed).with("loads", 50_000),
    ]
}

pub fn events(s: &Scenario) -> (Vec<TraceEvent>, SourceMap) {
    generate(s).expect("benchmark scenario generates")
}

pub fn encoded(s: &Scenario) -> Vec<u8> {
    let mut buf = Vec::new();
    write_binary(s, &mut buf).expect("benchmark scenario encodes");
    buf
}
