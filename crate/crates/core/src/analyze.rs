//! Trace replay: demultiplexes thread streams and drives the context tree,
//! shadow memory, both detectors and scope resolution for each thread.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use thiserror::Error;

use crate::context::{ContextError, ContextHandle, ContextTree};
use crate::profile::{canonicalize, merge_all, Canonicalizer, Profile, ProfileError, ThreadProfile};
use crate::sampler::{is_monitored, SamplingConfig};
use crate::scope::{ScopeBudget, ScopeQuery};
use crate::shadow::ShadowTable;
use crate::spatial::{
    KeyId, ObjectId, ObjectKey, ObjectRegistry, RegistryError, SpatialDetector, SpatialVerdict,
};
use crate::temporal::{LoadVerdict, TemporalDetector, DEFAULT_EPSILON};
use crate::trace::text::{read_text, TextError, HEADER};
use crate::trace::{check_load_shape, DecodeError, EventKind, SourceMap, TraceEvent, TraceReader};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisConfig {
    pub sampling: SamplingConfig,
    pub epsilon: f64,
    pub scope_budget: u32,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            sampling: SamplingConfig::default(),
            epsilon: DEFAULT_EPSILON,
            scope_budget: 1,
        }
    }
}

impl AnalysisConfig {
    /// Default settings with every load monitored.
    pub fn full() -> Self {
        AnalysisConfig {
            sampling: SamplingConfig::full(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Error)]
pub enum AnalysisErrorKind {
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("malformed event: {0}")]
    Malformed(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
#[error("event {position}: {kind}")]
pub struct AnalysisError {
    /// Zero-based index of the offending event in the trace.
    pub position: u64,
    pub kind: AnalysisErrorKind,
}

impl AnalysisError {
    fn at(position: u64, kind: impl Into<AnalysisErrorKind>) -> Self {
        AnalysisError {
            position,
            kind: kind.into(),
        }
    }
}

/// Per-load result, exposed for oracle comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOutcome {
    pub thread: u32,
    pub position: u64,
    pub monitored: bool,
    pub ctx: ContextHandle,
    pub temporal: Option<LoadVerdict>,
    pub spatial: Option<SpatialVerdict>,
}

struct ThreadState {
    tree: ContextTree,
    shadow: ShadowTable,
    temporal: TemporalDetector,
    spatial: SpatialDetector,
    temporal_scopes: ScopeBudget<(ContextHandle, ContextHandle)>,
    // One budget per live object, dropped on free.
    spatial_scopes: HashMap<ObjectId, ScopeBudget<(ContextHandle, ContextHandle)>>,
    retired_traversals: u64,
    alloc_keys: HashMap<ContextHandle, KeyId>,
    last_ins: Option<u64>,
}

impl ThreadState {
    fn traversals(&self) -> u64 {
        self.temporal_scopes.traversals()
            + self.retired_traversals
            + self
                .spatial_scopes
                .values()
                .map(ScopeBudget::traversals)
                .sum::<u64>()
    }
}

pub struct Analyzer {
    config: AnalysisConfig,
    map: SourceMap,
    threads: BTreeMap<u32, ThreadState>,
    registry: ObjectRegistry,
    position: u64,
}

impl Analyzer {
    pub fn new(map: SourceMap, config: AnalysisConfig) -> Result<Self, AnalysisError> {
        config
            .sampling
            .validate()
            .map_err(|m| AnalysisError::at(0, AnalysisErrorKind::Config(m)))?;
        if config.epsilon.is_nan() || config.epsilon < 0.0 {
            return Err(AnalysisError::at(
                0,
                AnalysisErrorKind::Config(format!("epsilon {} must be >= 0", config.epsilon)),
            ));
        }
        Ok(Analyzer {
            config,
            map,
            threads: BTreeMap::new(),
            registry: ObjectRegistry::new(),
            position: 0,
        })
    }

    pub fn source_map(&self) -> &SourceMap {
        &self.map
    }

    pub fn registry(&self) -> &ObjectRegistry {
        &self.registry
    }

    pub fn tree(&self, thread: u32) -> Option<&ContextTree> {
        self.threads.get(&thread).map(|t| &t.tree)
    }

    /// Scope-resolution tree walks performed so far, over all threads.
    pub fn scope_traversals(&self) -> u64 {
        self.threads.values().map(ThreadState::traversals).sum()
    }

    fn malformed(&self, msg: String) -> AnalysisError {
        AnalysisError::at(self.position, AnalysisErrorKind::Malformed(msg))
    }

    /// Applies one event; returns an outcome for load events.
    pub fn feed(&mut self, ev: &TraceEvent) -> Result<Option<LoadOutcome>, AnalysisError> {
        let out = self.apply(ev);
        self.position += 1;
        out
    }

    fn apply(&mut self, ev: &TraceEvent) -> Result<Option<LoadOutcome>, AnalysisError> {
        let pos = self.position;
        let at = |k: AnalysisErrorKind| AnalysisError::at(pos, k);
        if !self.threads.contains_key(&ev.thread_id) {
            let state = ThreadState {
                tree: ContextTree::with_loop_nesting(self.map.loop_nesting()),
                shadow: ShadowTable::new(),
                temporal: TemporalDetector::new(self.config.epsilon),
                spatial: SpatialDetector::new(self.config.epsilon),
                temporal_scopes: ScopeBudget::new(self.config.scope_budget),
                spatial_scopes: HashMap::new(),
                retired_traversals: 0,
                alloc_keys: HashMap::new(),
                last_ins: None,
            };
            self.threads.insert(ev.thread_id, state);
        }
        let prev = self.threads[&ev.thread_id].last_ins;
        if let Some(prev) = prev {
            if ev.ins_index <= prev {
                return Err(self.malformed(format!(
                    "ins_index {} not above previous {} on thread {}",
                    ev.ins_index, prev, ev.thread_id
                )));
            }
        }
        let site_ok = |id: u32| self.map.site(id).is_some();
        match &ev.kind {
            EventKind::Load(l) => {
                check_load_shape(l).map_err(|m| self.malformed(m))?;
                if !site_ok(l.site_id) {
                    return Err(self.malformed(format!("unknown site {}", l.site_id)));
                }
            }
            EventKind::Call { site_id } | EventKind::Return { site_id } if !site_ok(*site_id) => {
                return Err(self.malformed(format!("unknown site {site_id}")));
            }
            EventKind::LoopHead { loop_id, .. } if self.map.loop_info(*loop_id).is_none() => {
                return Err(self.malformed(format!("unknown loop {loop_id}")));
            }
            _ => {}
        }

        let config = self.config;
        if let EventKind::Free { base } = &ev.kind {
            let gone = self.registry.on_free(*base).map_err(|e| at(e.into()))?;
            for t in self.threads.values_mut() {
                t.spatial.retire(gone.id);
                if let Some(b) = t.spatial_scopes.remove(&gone.id) {
                    t.retired_traversals += b.traversals();
                }
            }
        }
        let registry = &mut self.registry;
        let map = &self.map;
        let t = self.threads.get_mut(&ev.thread_id).expect("inserted above");
        t.last_ins = Some(ev.ins_index);
        match &ev.kind {
            EventKind::Call { site_id } => {
                t.tree.on_call(*site_id);
            }
            EventKind::Return { site_id } => {
                t.tree.on_return(*site_id).map_err(|e| at(e.into()))?;
            }
            EventKind::LoopHead { loop_id, .. } => {
                t.tree.on_loop_head(*loop_id);
            }
            EventKind::Alloc { base, size } => {
                let here = t.tree.current();
                let key = match t.alloc_keys.get(&here) {
                    Some(&k) => k,
                    None => {
                        let alloc_context = Canonicalizer::new(&t.tree, map)
                            .resolve(here)
                            .map_err(|e| at(e.into()))?;
                        let k = registry.intern(ObjectKey::Dynamic { alloc_context });
                        t.alloc_keys.insert(here, k);
                        k
                    }
                };
                registry
                    .on_alloc_key(*base, *size, key)
                    .map_err(|e| at(e.into()))?;
            }
            EventKind::Free { .. } => {}
            EventKind::StaticImage { objects } => {
                registry.on_static_image(objects).map_err(|e| at(e.into()))?;
            }
            EventKind::ThreadStart => {}
            EventKind::Load(load) => {
                if !is_monitored(ev.ins_index, &config.sampling) {
                    return Ok(Some(LoadOutcome {
                        thread: ev.thread_id,
                        position: pos,
                        monitored: false,
                        ctx: ContextHandle::ROOT,
                        temporal: None,
                        spatial: None,
                    }));
                }
                let (ctx, ts) = t.tree.current_load_context(load.site_id);
                let tree = &t.tree;
                let tscopes = &mut t.temporal_scopes;
                let temporal = t
                    .temporal
                    .process_load(load, &mut t.shadow, ctx, ts, |c_old, t_old| {
                        let q = ScopeQuery {
                            c_old,
                            t_old,
                            c_new: ctx,
                            t_new: ts,
                        };
                        tscopes.resolve((c_old, ctx), &q, tree)
                    })
                    .map_err(|e| at(e.into()))?;
                let sscopes = &mut t.spatial_scopes;
                let limit = config.scope_budget;
                let spatial = t
                    .spatial
                    .process_load_spatial(load, registry, ctx, ts, |obj, c_old, t_old| {
                        let q = ScopeQuery {
                            c_old,
                            t_old,
                            c_new: ctx,
                            t_new: ts,
                        };
                        sscopes
                            .entry(obj)
                            .or_insert_with(|| ScopeBudget::new(limit))
                            .resolve((c_old, ctx), &q, tree)
                    })
                    .map_err(|e| at(e.into()))?;
                return Ok(Some(LoadOutcome {
                    thread: ev.thread_id,
                    position: pos,
                    monitored: true,
                    ctx,
                    temporal: Some(temporal),
                    spatial: Some(spatial),
                }));
            }
        }
        Ok(None)
    }

    /// Canonicalizes every thread and merges the results.
    pub fn finish(self) -> Result<Profile, AnalysisError> {
        let pos = self.position;
        let mut profiles = Vec::with_capacity(self.threads.len());
        for (_, t) in self.threads {
            let (temporal_pairs, temporal_totals) = t.temporal.into_parts();
            let (objects, spatial_totals) = t.spatial.into_parts();
            let tp = ThreadProfile {
                temporal_pairs,
                temporal_totals,
                objects,
                spatial_totals,
            };
            let p = canonicalize(&tp, &t.tree, &self.map, &self.registry)
                .map_err(|e| AnalysisError::at(pos, e))?;
            profiles.push(p);
        }
        Ok(merge_all(profiles))
    }
}

pub fn analyze_events<'a>(
    events: impl IntoIterator<Item = &'a TraceEvent>,
    map: &SourceMap,
    config: AnalysisConfig,
) -> Result<Profile, AnalysisError> {
    let mut a = Analyzer::new(map.clone(), config)?;
    for ev in events {
        a.feed(ev)?;
    }
    a.finish()
}

/// Streams a binary trace through the analyzer.
pub fn analyze_reader<R: Read>(source: R, config: AnalysisConfig) -> Result<Profile, AnalysisError> {
    let reader = TraceReader::new(source).map_err(|e| AnalysisError::at(0, e))?;
    let mut a = Analyzer::new(reader.source_map().clone(), config)?;
    for ev in reader {
        let pos = a.position;
        let ev = ev.map_err(|e| AnalysisError::at(pos, e))?;
        a.feed(&ev)?;
    }
    a.finish()
}

/// Analyzes a trace file in either encoding, chosen by its first bytes.
pub fn analyze_path(path: &Path, config: AnalysisConfig) -> Result<Profile, AnalysisError> {
    let file = File::open(path).map_err(|e| AnalysisError::at(0, e))?;
    let mut source = BufReader::with_capacity(1 << 20, file);
    let head = source.fill_buf().map_err(|e| AnalysisError::at(0, e))?;
    if head.starts_with(HEADER.as_bytes()) {
        let (events, map) = read_text(source).map_err(|e| AnalysisError::at(0, e))?;
        analyze_events(&events, &map, config)
    } else {
        analyze_reader(source, config)
    }
}
