//! Spatial redundancy: consecutive loads anywhere inside one data object
//! that observe equal values.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::ContextHandle;
use crate::profile::CanonicalContext;
use crate::temporal::{
    values_match, Fraction, FractionPair, ProgramTotals, RedundancyClass, RedundancyCounters, ThreadPairKey,
};
use crate::trace::{FpClass, Load, LoadValue, StaticObject};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObjectId(pub u64);

/// Interned [`ObjectKey`]. Every allocation from one context shares a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyId(pub u32);

/// Report identity of an object: the symbol name for statics, the
/// allocation context for heap objects.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ObjectKey {
    Static { name: String },
    Dynamic { alloc_context: CanonicalContext },
}

impl ObjectKey {
    pub fn label(&self) -> String {
        match self {
            ObjectKey::Static { name } => name.clone(),
            ObjectKey::Dynamic { alloc_context } => format!("heap@{}", alloc_context.leaf_label()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObjectInfo {
    pub id: ObjectId,
    pub key: KeyId,
    pub base: u64,
    pub size: u64,
}

impl ObjectInfo {
    fn end(&self) -> u128 {
        self.base as u128 + self.size as u128
    }

    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.base && (addr as u128) < self.end()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("object [{base:#x}, +{size}) overlaps live object {other:?}")]
    Overlap { base: u64, size: u64, other: ObjectId },
    #[error("zero-sized object at {0:#x}")]
    ZeroSize(u64),
    #[error("free of {0:#x} does not match a live heap object")]
    UnmatchedFree(u64),
}

/// Interval map of live objects. Freed objects are forgotten; only their
/// interned keys stay, so memory is bounded by live objects plus distinct
/// allocation contexts.
#[derive(Debug, Clone, Default)]
pub struct ObjectRegistry {
    live: BTreeMap<u64, ObjectInfo>,
    next_id: u64,
    keys: Vec<ObjectKey>,
    key_ids: HashMap<ObjectKey, KeyId>,
}

impl ObjectRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, key: ObjectKey) -> KeyId {
        if let Some(&k) = self.key_ids.get(&key) {
            return k;
        }
        let k = KeyId(self.keys.len() as u32);
        self.keys.push(key.clone());
        self.key_ids.insert(key, k);
        k
    }

    pub fn key(&self, k: KeyId) -> &ObjectKey {
        &self.keys[k.0 as usize]
    }

    /// Live object containing `addr`.
    pub fn lookup(&self, addr: u64) -> Option<&ObjectInfo> {
        let (_, info) = self.live.range(..=addr).next_back()?;
        info.contains(addr).then_some(info)
    }

    pub fn live_count(&self) -> usize {
        self.live.len()
    }

    /// Number of objects ever registered.
    pub fn registered(&self) -> u64 {
        self.next_id
    }

    fn overlapping(&self, base: u64, size: u64) -> Option<ObjectId> {
        let end = base as u128 + size as u128;
        if let Some((_, o)) = self.live.range(..=base).next_back() {
            if o.end() > base as u128 {
                return Some(o.id);
            }
        }
        self.live
            .range(base..)
            .next()
            .filter(|(&b, _)| (b as u128) < end)
            .map(|(_, o)| o.id)
    }

    fn insert(&mut self, base: u64, size: u64, key: KeyId) -> Result<ObjectId, RegistryError> {
        if size == 0 {
            return Err(RegistryError::ZeroSize(base));
        }
        if let Some(other) = self.overlapping(base, size) {
            return Err(RegistryError::Overlap { base, size, other });
        }
        let id = ObjectId(self.next_id);
        self.next_id += 1;
        self.live.insert(base, ObjectInfo { id, key, base, size });
        Ok(id)
    }

    pub fn on_alloc(
        &mut self,
        base: u64,
        size: u64,
        alloc_context: CanonicalContext,
    ) -> Result<ObjectId, RegistryError> {
        let key = self.intern(ObjectKey::Dynamic { alloc_context });
        self.on_alloc_key(base, size, key)
    }

    /// Like [`on_alloc`](Self::on_alloc) with an already interned key.
    pub fn on_alloc_key(&mut self, base: u64, size: u64, key: KeyId) -> Result<ObjectId, RegistryError> {
        debug_assert!(matches!(self.key(key), ObjectKey::Dynamic { .. }));
        self.insert(base, size, key)
    }

    /// Retires the heap object at `base` and returns what it was.
    pub fn on_free(&mut self, base: u64) -> Result<ObjectInfo, RegistryError> {
        match self.live.get(&base) {
            Some(o) if matches!(self.key(o.key), ObjectKey::Dynamic { .. }) => {
                Ok(self.live.remove(&base).expect("present"))
            }
            _ => Err(RegistryError::UnmatchedFree(base)),
        }
    }

    /// Registers every object of the image, or none of them on error.
    pub fn on_static_image(&mut self, objects: &[StaticObject]) -> Result<Vec<ObjectId>, RegistryError> {
        let mut ids = Vec::with_capacity(objects.len());
        for o in objects {
            let key = self.intern(ObjectKey::Static { name: o.name.clone() });
            match self.insert(o.base, o.size, key) {
                Ok(id) => ids.push(id),
                Err(e) => {
                    for (o, _) in objects.iter().zip(&ids) {
                        self.live.remove(&o.base);
                    }
                    return Err(e);
                }
            }
        }
        Ok(ids)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct PriorLoad {
    value: LoadValue,
    fp: FpClass,
    ctx: ContextHandle,
    ts: u64,
}

/// Counters of one object key within one thread.
#[derive(Debug, Clone, Default)]
pub struct ObjectTally {
    pub counters: RedundancyCounters,
    pub pairs: HashMap<ThreadPairKey, RedundancyCounters>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpatialVerdict {
    /// Object hit by the load and its key; `None` outside every object.
    pub object: Option<(ObjectId, KeyId)>,
    pub redundant: bool,
    pub class: RedundancyClass,
    pub prior: Option<(ContextHandle, u64)>,
    pub scope: Option<ContextHandle>,
    pub fp_exact: bool,
}

/// Per-thread spatial state: the last load of each live object, and counters
/// per object key.
#[derive(Debug, Clone)]
pub struct SpatialDetector {
    epsilon: f64,
    last: HashMap<ObjectId, PriorLoad>,
    tallies: HashMap<KeyId, ObjectTally>,
    totals: ProgramTotals,
}

impl SpatialDetector {
    pub fn new(epsilon: f64) -> Self {
        SpatialDetector {
            epsilon,
            last: HashMap::new(),
            tallies: HashMap::new(),
            totals: ProgramTotals::default(),
        }
    }

    pub fn totals(&self) -> &ProgramTotals {
        &self.totals
    }

    pub fn tallies(&self) -> &HashMap<KeyId, ObjectTally> {
        &self.tallies
    }

    pub fn into_parts(self) -> (HashMap<KeyId, ObjectTally>, ProgramTotals) {
        (self.tallies, self.totals)
    }

    /// Drops the last-value state of a freed object.
    pub fn retire(&mut self, id: ObjectId) {
        self.last.remove(&id);
    }

    /// `scope` receives the object and the prior context and timestamp.
    pub fn process_load_spatial<E>(
        &mut self,
        load: &Load,
        registry: &ObjectRegistry,
        ctx: ContextHandle,
        ts: u64,
        scope: impl FnOnce(ObjectId, ContextHandle, u64) -> Result<Option<ContextHandle>, E>,
    ) -> Result<SpatialVerdict, E> {
        let class = RedundancyClass::of(load.fp_class);
        let Some(&ObjectInfo { id, key: key_id, .. }) = registry.lookup(load.addr) else {
            return Ok(SpatialVerdict {
                object: None,
                redundant: false,
                class,
                prior: None,
                scope: None,
                fp_exact: false,
            });
        };
        let new = load.value.as_bytes();
        let (redundant, fp_exact, prior) = match self.last.get(&id) {
            Some(p) => {
                let old = p.value.as_bytes();
                let exact = old == new;
                let redundant =
                    exact || (p.fp == load.fp_class && values_match(old, new, load.fp_class, self.epsilon));
                (redundant, exact && load.fp_class.is_fp(), Some((p.ctx, p.ts)))
            }
            None => (false, false, None),
        };
        let scope = match prior {
            Some((c_old, t_old)) => scope(id, c_old, t_old)?,
            None => None,
        };
        self.last.insert(
            id,
            PriorLoad {
                value: load.value,
                fp: load.fp_class,
                ctx,
                ts,
            },
        );
        let bytes = new.len() as u64;
        let tally = self.tallies.entry(key_id).or_default();
        tally.counters.record(bytes, class, redundant, fp_exact);
        let key = ThreadPairKey {
            c_old: prior.map(|p| p.0),
            c_new: ctx,
            scope,
        };
        tally
            .pairs
            .entry(key)
            .or_default()
            .record(bytes, class, redundant, fp_exact);
        self.totals.record(bytes, class, redundant);
        Ok(SpatialVerdict {
            object: Some((id, key_id)),
            redundant,
            class,
            prior,
            scope,
            fp_exact,
        })
    }
}

/// This object's redundant bytes over the loaded bytes of all objects.
pub fn object_fraction<'a>(
    object: &RedundancyCounters,
    all_objects: impl IntoIterator<Item = &'a RedundancyCounters>,
) -> FractionPair {
    let mut sum = RedundancyCounters::default();
    for c in all_objects {
        sum.add(c);
    }
    FractionPair {
        precise: Fraction::ratio(object.redundant_bytes_precise, sum.total_bytes_precise),
        approx: Fraction::ratio(object.redundant_bytes_approx, sum.total_bytes_approx),
    }
}
