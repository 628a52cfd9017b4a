//! Deterministic synthetic traces for the classic redundant-load patterns.
//!
//! Every scenario is a small program emitted directly as events. Identical
//! names and parameters give byte-identical traces. With `threads=N` each
//! thread replays the same program on its own copy of memory (addresses
//! shifted by `thread << 40`), one thread after another.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use thiserror::Error;

use crate::trace::{
    text::write_text, EncodeError, EventKind, FpClass, Load, LoadValue, SourceMap, StaticObject, TraceEvent,
    TraceWriter,
};

pub mod oracle;
mod scenarios;

pub use oracle::{expected_redundancy, oracle_replay, OracleResult, OracleVerdict, ORACLE_LOAD_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScenarioName {
    AdjacentEqual,
    LinearSearch,
    HashCollision,
    Stencil,
    ForwardCopy,
    CalleeSpill,
    SparseZeros,
    ApproxDrift,
    RandomMixed,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 9] = [
        ScenarioName::AdjacentEqual,
        ScenarioName::LinearSearch,
        ScenarioName::HashCollision,
        ScenarioName::Stencil,
        ScenarioName::ForwardCopy,
        ScenarioName::CalleeSpill,
        ScenarioName::SparseZeros,
        ScenarioName::ApproxDrift,
        ScenarioName::RandomMixed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::AdjacentEqual => "adjacent_equal",
            ScenarioName::LinearSearch => "linear_search",
            ScenarioName::HashCollision => "hash_collision",
            ScenarioName::Stencil => "stencil",
            ScenarioName::ForwardCopy => "forward_copy",
            ScenarioName::CalleeSpill => "callee_spill",
            ScenarioName::SparseZeros => "sparse_zeros",
            ScenarioName::ApproxDrift => "approx_drift",
            ScenarioName::RandomMixed => "random_mixed",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, GenError> {
        ScenarioName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| GenError::UnknownScenario(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("scenario {scenario} has no parameter {param:?} (accepted: {accepted})")]
    UnknownParam {
        scenario: ScenarioName,
        param: String,
        accepted: String,
    },
    #[error("parameter {param}={value:?}: {reason}")]
    BadParam {
        param: String,
        value: String,
        reason: String,
    },
    #[error("parameter {0:?} is not of the form key=value")]
    BadAssignment(String),
    #[error("trace has more than {limit} loads; too large for the oracle")]
    TooLarge { limit: u64 },
    #[error("oracle replay failed at event {position}: {reason}")]
    Replay { position: u64, reason: String },
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub name: ScenarioName,
    pub params: BTreeMap<String, String>,
}

impl Scenario {
    pub fn new(name: ScenarioName) -> Self {
        Scenario {
            name,
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    /// Builds a scenario from a name and `key=value` assignments.
    pub fn parse<S: AsRef<str>>(name: &str, assignments: &[S]) -> Result<Self, GenError> {
        let mut s = Scenario::new(name.parse()?);
        for a in assignments {
            let a = a.as_ref();
            let (k, v) = a
                .split_once('=')
                .ok_or_else(|| GenError::BadAssignment(a.to_string()))?;
            s.params.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(s)
    }
}

/// Typed access to scenario parameters; rejects leftovers on `finish`.
pub(crate) struct Params<'a> {
    scenario: ScenarioName,
    raw: &'a BTreeMap<String, String>,
    used: Vec<&'static str>,
}

impl<'a> Params<'a> {
    pub(crate) fn new(s: &'a Scenario) -> Self {
        Params {
            scenario: s.name,
            raw: &s.params,
            used: Vec::new(),
        }
    }

    fn bad(key: &str, value: &str, reason: impl Into<String>) -> GenError {
        GenError::BadParam {
            param: key.to_string(),
            value: value.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn raw(&mut self, key: &'static str) -> Option<&'a str> {
        self.used.push(key);
        self.raw.get(key).map(String::as_str)
    }

    pub(crate) fn u64(&mut self, key: &'static str, default: u64, min: u64) -> Result<u64, GenError> {
        let v = match self.raw(key) {
            None => default,
            Some(s) => s
                .parse()
                .map_err(|_| Self::bad(key, s, "expected an unsigned integer"))?,
        };
        if v < min {
            return Err(Self::bad(key, &v.to_string(), format!("must be at least {min}")));
        }
        Ok(v)
    }

    pub(crate) fn f64(&mut self, key: &'static str, default: f64, lo: f64, hi: f64) -> Result<f64, GenError> {
        let v = match self.raw(key) {
            None => default,
            Some(s) => s.parse().map_err(|_| Self::bad(key, s, "expected a number"))?,
        };
        if !(lo..=hi).contains(&v) {
            return Err(Self::bad(
                key,
                &v.to_string(),
                format!("must lie in [{lo}, {hi}]"),
            ));
        }
        Ok(v)
    }

    pub(crate) fn bool(&mut self, key: &'static str, default: bool) -> Result<bool, GenError> {
        match self.raw(key) {
            None => Ok(default),
            Some("true" | "1" | "yes") => Ok(true),
            Some("false" | "0" | "no") => Ok(false),
            Some(s) => Err(Self::bad(key, s, "expected true or false")),
        }
    }

    pub(crate) fn finish(mut self) -> Result<(), GenError> {
        for k in self.raw.keys() {
            if !self.used.contains(&k.as_str()) {
                self.used.sort_unstable();
                self.used.dedup();
                return Err(GenError::UnknownParam {
                    scenario: self.scenario,
                    param: k.clone(),
                    accepted: self.used.join(", "),
                });
            }
        }
        Ok(())
    }
}

pub(crate) type Sink<'s> = dyn FnMut(TraceEvent) -> Result<(), GenError> + 's;

/// Event builder for one thread: numbers instructions and shifts addresses.
pub struct Emitter<'s, 'k> {
    sink: &'k mut Sink<'s>,
    thread: u32,
    ins: u64,
    offset: u64,
}

impl<'s, 'k> Emitter<'s, 'k> {
    fn push(&mut self, kind: EventKind) -> Result<(), GenError> {
        let ev = TraceEvent {
            thread_id: self.thread,
            ins_index: self.ins,
            kind,
        };
        self.ins += 1;
        (self.sink)(ev)
    }

    pub fn thread(&self) -> u32 {
        self.thread
    }

    pub fn thread_start(&mut self) -> Result<(), GenError> {
        self.push(EventKind::ThreadStart)
    }

    pub fn call(&mut self, site_id: u32) -> Result<(), GenError> {
        self.push(EventKind::Call { site_id })
    }

    pub fn ret(&mut self, site_id: u32) -> Result<(), GenError> {
        self.push(EventKind::Return { site_id })
    }

    pub fn loop_head(&mut self, loop_id: u32, site_id: u32) -> Result<(), GenError> {
        self.push(EventKind::LoopHead { loop_id, site_id })
    }

    pub fn load(
        &mut self,
        addr: u64,
        value: LoadValue,
        fp_class: FpClass,
        site_id: u32,
    ) -> Result<(), GenError> {
        self.push(EventKind::Load(Load {
            addr: addr + self.offset,
            value,
            fp_class,
            site_id,
        }))
    }

    pub fn load_u32(&mut self, addr: u64, v: u32, site_id: u32) -> Result<(), GenError> {
        self.load(addr, LoadValue::from_u32(v), FpClass::NonFp, site_id)
    }

    pub fn load_u64(&mut self, addr: u64, v: u64, site_id: u32) -> Result<(), GenError> {
        self.load(addr, LoadValue::from_u64(v), FpClass::NonFp, site_id)
    }

    pub fn load_f64(&mut self, addr: u64, v: f64, site_id: u32) -> Result<(), GenError> {
        self.load(addr, LoadValue::from_f64(v), FpClass::F64, site_id)
    }

    pub fn alloc(&mut self, base: u64, size: u64) -> Result<(), GenError> {
        self.push(EventKind::Alloc {
            base: base + self.offset,
            size,
        })
    }

    pub fn free(&mut self, base: u64) -> Result<(), GenError> {
        self.push(EventKind::Free {
            base: base + self.offset,
        })
    }

    pub fn static_image(&mut self, objects: &[(&str, u64, u64)]) -> Result<(), GenError> {
        let objects = objects
            .iter()
            .map(|&(name, base, size)| StaticObject {
                name: name.to_string(),
                base: base + self.offset,
                size,
            })
            .collect();
        self.push(EventKind::StaticImage { objects })
    }
}

/// One scenario program, run once per thread.
pub(crate) trait Program {
    fn source_map(&self) -> SourceMap;
    fn emit(&self, e: &mut Emitter<'_, '_>) -> Result<(), GenError>;
}

pub const THREAD_STRIDE_BITS: u32 = 40;

/// Source map of the scenario's trace.
pub fn source_map(s: &Scenario) -> Result<SourceMap, GenError> {
    Ok(scenarios::build(s)?.0.source_map())
}

/// Streams the scenario's events into `sink`; returns the source map.
pub fn generate_into<F>(s: &Scenario, mut sink: F) -> Result<SourceMap, GenError>
where
    F: FnMut(TraceEvent) -> Result<(), GenError>,
{
    let (program, threads) = scenarios::build(s)?;
    let map = program.source_map();
    for t in 0..threads {
        let mut e = Emitter {
            sink: &mut sink,
            thread: t,
            ins: 0,
            offset: (t as u64) << THREAD_STRIDE_BITS,
        };
        e.thread_start()?;
        program.emit(&mut e)?;
    }
    Ok(map)
}

pub fn generate(s: &Scenario) -> Result<(Vec<TraceEvent>, SourceMap), GenError> {
    let mut events = Vec::new();
    let map = generate_into(s, |ev| {
        events.push(ev);
        Ok(())
    })?;
    Ok((events, map))
}

/// Writes the scenario as a binary trace; returns the event count.
pub fn write_binary<W: Write>(s: &Scenario, sink: W) -> Result<u64, GenError> {
    let map = source_map(s)?;
    let mut w = TraceWriter::new(sink, &map)?;
    let mut n = 0u64;
    generate_into(s, |ev| {
        n += 1;
        w.write_event(&ev).map_err(GenError::from)
    })?;
    w.finish()?;
    Ok(n)
}

/// Writes the scenario in the text encoding.
pub fn write_text_trace<W: Write>(s: &Scenario, sink: W) -> Result<u64, GenError> {
    let (events, map) = generate(s)?;
    write_text(&events, &map, sink)?;
    Ok(events.len() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for n in ScenarioName::ALL {
            assert_eq!(n.as_str().parse::<ScenarioName>().unwrap(), n);
        }
        assert!("nope".parse::<ScenarioName>().is_err());
    }

    #[test]
    fn every_scenario_generates_valid_deterministic_traces() {
        for n in ScenarioName::ALL {
            let s = Scenario::new(n).with("threads", 2);
            let mut a = Vec::new();
            let count = write_binary(&s, &mut a).unwrap();
            assert!(count > 0, "{n}");
            let mut b = Vec::new();
            write_binary(&s, &mut b).unwrap();
            assert_eq!(a, b, "{n} is not deterministic");
            let (events, _) = crate::trace::read_trace(&a[..]).unwrap();
            assert_eq!(events.len() as u64, count);
        }
    }

    #[test]
    fn parameter_errors() {
        assert!(matches!(
            generate(&Scenario::new(ScenarioName::Stencil).with("bogus", 1)),
            Err(GenError::UnknownParam { .. })
        ));
        assert!(matches!(
            generate(&Scenario::new(ScenarioName::SparseZeros).with("zero_density", 2)),
            Err(GenError::BadParam { .. })
        ));
        assert!(matches!(
            Scenario::parse("stencil", &["n"]),
            Err(GenError::BadAssignment(_))
        ));
        assert!(Scenario::parse("stencil", &["n=16", "steps=2"]).is_ok());
    }

    #[test]
    fn text_and_binary_agree() {
        let s = Scenario::new(ScenarioName::RandomMixed).with("loads", 300);
        let mut text = Vec::new();
        write_text_trace(&s, &mut text).unwrap();
        let (from_text, _) = crate::trace::text::read_text(&text[..]).unwrap();
        assert_eq!(from_text, generate(&s).unwrap().0);
    }
}
