//! Redundant-load profiling over instruction traces.
//!
//! A trace is replayed per thread through a loop-extended calling context
//! tree and a byte-level shadow memory. Loads whose bytes repeat the previous
//! load of the same bytes are temporally redundant; consecutive loads of
//! equal values within one data object are spatially redundant. Each
//! redundant pair is attributed to its two contexts and to the outermost
//! loop in which the repetition happens.

pub mod analyze;
pub mod context;
pub mod profile;
pub mod report;
pub mod sampler;
pub mod scope;
pub mod shadow;
pub mod spatial;
pub mod temporal;
pub mod trace;
pub mod workload;

pub use analyze::{
    analyze_events, analyze_path, analyze_reader, AnalysisConfig, AnalysisError, AnalysisErrorKind, Analyzer,
    LoadOutcome,
};
pub use context::{ContextError, ContextHandle, ContextTree, NodeKind};
pub use profile::{
    canonicalize, merge, merge_all, CanonicalContext, Frame, FrameKind, ObjectRecord, PairKey, Profile,
    ProfileError,
};
pub use sampler::{is_monitored, SamplingConfig};
pub use scope::{resolve_scope, ScopeBudget, ScopeQuery};
pub use shadow::ShadowTable;
pub use spatial::{object_fraction, KeyId, ObjectId, ObjectKey, ObjectRegistry, SpatialDetector};
pub use temporal::{
    approx_equal_f32, approx_equal_f64, pair_fraction, program_fraction, Fraction, FractionPair, LoadVerdict,
    ProgramTotals, RedundancyClass, RedundancyCounters, TemporalDetector,
};
pub use trace::{EventKind, FpClass, Load, LoadValue, SourceMap, StaticObject, TraceEvent};
