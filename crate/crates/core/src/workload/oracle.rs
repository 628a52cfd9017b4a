//! Brute-force reference for the detectors.
//!
//! Contexts are explicit step vectors rebuilt from a frame stack, memory is
//! a plain per-byte map, objects are found by linear scan, and the scope of
//! a pair is found by searching the recorded header-pass positions of every
//! loop on the common prefix of the two contexts.

use std::collections::{BTreeSet, HashMap};

use super::{generate, GenError, Scenario};
use crate::profile::{CanonicalContext, Frame, FrameKind, ObjectRecord, PairKey, Profile};
use crate::spatial::ObjectKey;
use crate::temporal::RedundancyClass;
use crate::trace::{EventKind, FpClass, Load, SourceMap, TraceEvent};

pub const ORACLE_LOAD_LIMIT: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Step {
    Call(u32),
    Loop(u32),
    Site(u32),
}

type Path = Vec<Step>;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleVerdict {
    pub thread: u32,
    pub position: u64,
    pub temporal_redundant: bool,
    pub temporal_scope: Option<CanonicalContext>,
    /// Object hit by the load and whether the load repeated its last value.
    pub spatial: Option<(ObjectKey, bool)>,
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub profile: Profile,
    pub verdicts: Vec<OracleVerdict>,
}

struct Obj {
    base: u64,
    size: u64,
    key: ObjectKey,
    live: bool,
}

#[derive(Default)]
struct ThreadState {
    // (entering call site, open loops outermost first)
    frames: Vec<(Option<u32>, Vec<u32>)>,
    bytes: HashMap<u64, (u8, usize, u64)>,
    passes: HashMap<Path, Vec<u64>>,
    temporal_budget: HashMap<(usize, usize), (u32, Option<Path>)>,
    spatial_budget: HashMap<(usize, usize, usize), (u32, Option<Path>)>,
    // object index -> (bytes, fp class, ctx, position)
    last_on_object: HashMap<usize, (Vec<u8>, FpClass, usize, u64)>,
}

impl ThreadState {
    fn new() -> Self {
        ThreadState {
            frames: vec![(None, Vec::new())],
            ..Default::default()
        }
    }

    fn path(&self) -> Path {
        let mut p = Vec::new();
        for (call, loops) in &self.frames {
            if let Some(c) = call {
                p.push(Step::Call(*c));
            }
            p.extend(loops.iter().map(|&l| Step::Loop(l)));
        }
        p
    }
}

fn near(a: f64, b: f64, eps: f64) -> bool {
    if a.to_bits() == b.to_bits() {
        return true;
    }
    if a.is_nan() || b.is_nan() || a.is_infinite() || b.is_infinite() {
        return false;
    }
    let big = if a.abs() > b.abs() { a.abs() } else { b.abs() };
    (a - b).abs() <= eps * big
}

fn same_value(old: &[u8], new: &[u8], fp: FpClass, eps: f64) -> bool {
    if old.len() != new.len() {
        return false;
    }
    if old == new {
        return true;
    }
    match fp {
        FpClass::NonFp => false,
        FpClass::F32 => (0..old.len() / 4).all(|k| {
            let a = f32::from_le_bytes([old[4 * k], old[4 * k + 1], old[4 * k + 2], old[4 * k + 3]]);
            let b = f32::from_le_bytes([new[4 * k], new[4 * k + 1], new[4 * k + 2], new[4 * k + 3]]);
            a.to_bits() == b.to_bits() || near(a as f64, b as f64, eps)
        }),
        FpClass::F64 => (0..old.len() / 8).all(|k| {
            let mut a = [0u8; 8];
            let mut b = [0u8; 8];
            a.copy_from_slice(&old[8 * k..8 * k + 8]);
            b.copy_from_slice(&new[8 * k..8 * k + 8]);
            near(f64::from_le_bytes(a), f64::from_le_bytes(b), eps)
        }),
    }
}

fn brute_scope(passes: &HashMap<Path, Vec<u64>>, a: &Path, b: &Path, t_old: u64, t_new: u64) -> Option<Path> {
    let common = a.iter().zip(b.iter()).take_while(|(x, y)| x == y).count();
    for k in 1..=common {
        if !matches!(a[k - 1], Step::Loop(_)) {
            continue;
        }
        if let Some(ps) = passes.get(&a[..k]) {
            if ps.iter().any(|&p| t_old < p && p < t_new) {
                return Some(a[..k].to_vec());
            }
        }
    }
    None
}

fn with_budget<K: std::hash::Hash + Eq>(
    budget: &mut HashMap<K, (u32, Option<Path>)>,
    limit: u32,
    key: K,
    compute: impl FnOnce() -> Option<Path>,
) -> Option<Path> {
    match budget.get_mut(&key) {
        None => {
            let s = compute();
            budget.insert(key, (1, s.clone()));
            s
        }
        Some((n, first)) if *n >= limit => first.clone(),
        Some((n, _)) => {
            *n += 1;
            compute()
        }
    }
}

struct Replay<'m> {
    map: &'m SourceMap,
    eps: f64,
    limit: u32,
    interned: Vec<Path>,
    ids: HashMap<Path, usize>,
    canon: HashMap<Path, CanonicalContext>,
    objects: Vec<Obj>,
    threads: HashMap<u32, ThreadState>,
    profile: Profile,
    verdicts: Vec<OracleVerdict>,
}

impl<'m> Replay<'m> {
    fn intern(&mut self, p: Path) -> usize {
        if let Some(&i) = self.ids.get(&p) {
            return i;
        }
        self.interned.push(p.clone());
        self.ids.insert(p, self.interned.len() - 1);
        self.interned.len() - 1
    }

    fn canonical(&mut self, p: &Path) -> Result<CanonicalContext, String> {
        if let Some(c) = self.canon.get(p) {
            return Ok(c.clone());
        }
        let mut frames = Vec::new();
        for s in p {
            let f = match *s {
                Step::Call(id) | Step::Site(id) => {
                    let site = self.map.site(id).ok_or(format!("unknown site {id}"))?;
                    Frame {
                        kind: if matches!(s, Step::Call(_)) {
                            FrameKind::Function
                        } else {
                            FrameKind::LoadSite
                        },
                        name: site.function.clone(),
                        file: site.file.clone(),
                        line: site.line,
                    }
                }
                Step::Loop(id) => {
                    let l = self.map.loop_info(id).ok_or(format!("unknown loop {id}"))?;
                    Frame {
                        kind: FrameKind::Loop,
                        name: "loop".into(),
                        file: l.file.clone(),
                        line: l.line,
                    }
                }
            };
            frames.push(f);
        }
        let c = CanonicalContext::new(frames);
        self.canon.insert(p.clone(), c.clone());
        Ok(c)
    }

    fn pair_key(&mut self, old: Option<usize>, new: usize, scope: &Option<Path>) -> Result<PairKey, String> {
        let c_old = match old {
            Some(i) => Some(self.canonical(&self.interned[i].clone())?),
            None => None,
        };
        let c_new = self.canonical(&self.interned[new].clone())?;
        let scope = match scope {
            Some(s) => Some(self.canonical(s)?),
            None => None,
        };
        Ok(PairKey { c_old, c_new, scope })
    }

    fn event(&mut self, pos: u64, ev: &TraceEvent) -> Result<(), String> {
        #[allow(clippy::unwrap_or_default)]
        let t = self.threads.entry(ev.thread_id).or_insert_with(ThreadState::new);
        match &ev.kind {
            EventKind::ThreadStart => {}
            EventKind::Call { site_id } => t.frames.push((Some(*site_id), Vec::new())),
            EventKind::Return { site_id } => {
                if t.frames.len() < 2 {
                    return Err(format!("return from {site_id} without call"));
                }
                let (open, _) = t.frames.pop().expect("checked");
                if open != Some(*site_id) {
                    return Err(format!("return from {site_id} does not match {open:?}"));
                }
            }
            EventKind::LoopHead { loop_id, .. } => {
                let l = *loop_id;
                let parent = self.map.loop_info(l).map(|i| i.parent);
                let open = &mut t.frames.last_mut().expect("root frame").1;
                if let Some(i) = open.iter().rposition(|&o| o == l) {
                    open.truncate(i + 1);
                } else {
                    match parent {
                        Some(Some(p)) => {
                            if let Some(j) = open.iter().rposition(|&o| o == p) {
                                open.truncate(j + 1);
                            }
                        }
                        Some(None) => open.clear(),
                        None => {}
                    }
                    open.push(l);
                }
                let node = t.path();
                t.passes.entry(node).or_default().push(pos);
            }
            EventKind::Alloc { base, size } => {
                let path = t.path();
                let ctx = self.canonical(&path)?;
                self.add_object(*base, *size, ObjectKey::Dynamic { alloc_context: ctx })?;
            }
            EventKind::Free { base } => {
                let o = self
                    .objects
                    .iter_mut()
                    .find(|o| o.live && o.base == *base && matches!(o.key, ObjectKey::Dynamic { .. }))
                    .ok_or(format!("free of {base:#x} matches nothing"))?;
                o.live = false;
            }
            EventKind::StaticImage { objects } => {
                for o in objects {
                    self.add_object(o.base, o.size, ObjectKey::Static { name: o.name.clone() })?;
                }
            }
            EventKind::Load(l) => self.load(pos, ev.thread_id, l)?,
        }
        Ok(())
    }

    fn add_object(&mut self, base: u64, size: u64, key: ObjectKey) -> Result<(), String> {
        let end = base as u128 + size as u128;
        for o in self.objects.iter().filter(|o| o.live) {
            if (base as u128) < o.base as u128 + o.size as u128 && (o.base as u128) < end {
                return Err(format!("object at {base:#x} overlaps {:#x}", o.base));
            }
        }
        if size == 0 {
            return Err(format!("empty object at {base:#x}"));
        }
        self.objects.push(Obj {
            base,
            size,
            key,
            live: true,
        });
        Ok(())
    }

    fn load(&mut self, pos: u64, tid: u32, l: &Load) -> Result<(), String> {
        let (eps, limit) = (self.eps, self.limit);
        let mut path = self.threads[&tid].path();
        path.push(Step::Site(l.site_id));
        let ctx = self.intern(path.clone());
        let new = l.value.as_bytes().to_vec();
        let n = new.len() as u64;
        let class = if l.fp_class == FpClass::NonFp {
            RedundancyClass::Precise
        } else {
            RedundancyClass::Approx
        };

        // temporal
        let t = self.threads.get_mut(&tid).expect("thread exists");
        let olds: Vec<Option<(u8, usize, u64)>> = (0..n)
            .map(|k| t.bytes.get(&l.addr.wrapping_add(k)).copied())
            .collect();
        let prior = olds[0].map(|(_, c, p)| (c, p));
        let redundant = olds.iter().all(Option::is_some) && {
            let old: Vec<u8> = olds.iter().map(|o| o.expect("all present").0).collect();
            same_value(&old, &new, l.fp_class, eps)
        };
        let exact = olds.iter().zip(&new).all(|(o, b)| o.map(|x| x.0) == Some(*b));
        let fp_exact = exact && l.fp_class != FpClass::NonFp;
        let scope = match prior {
            None => None,
            Some((c_old, t_old)) => {
                let (a, b) = (&self.interned[c_old], &self.interned[ctx]);
                let passes = &t.passes;
                with_budget(&mut t.temporal_budget, limit, (c_old, ctx), || {
                    brute_scope(passes, a, b, t_old, pos)
                })
            }
        };
        for (k, b) in new.iter().enumerate() {
            t.bytes.insert(l.addr.wrapping_add(k as u64), (*b, ctx, pos));
        }
        let key = self.pair_key(prior.map(|p| p.0), ctx, &scope)?;
        self.profile
            .pairs
            .entry(key)
            .or_default()
            .record(n, class, redundant, fp_exact);
        self.profile.temporal_totals.record(n, class, redundant);
        let temporal_scope = match &scope {
            Some(s) => Some(self.canonical(s)?),
            None => None,
        };

        // spatial
        let hit = self
            .objects
            .iter()
            .position(|o| o.live && o.base <= l.addr && (l.addr as u128) < o.base as u128 + o.size as u128);
        let mut spatial = None;
        if let Some(oi) = hit {
            let t = self.threads.get_mut(&tid).expect("thread exists");
            let last = t.last_on_object.get(&oi).cloned();
            let (red, fp_exact, prior) = match &last {
                None => (false, false, None),
                Some((v, fp, c, p)) => {
                    let exact = *v == new;
                    let red = exact || (*fp == l.fp_class && same_value(v, &new, l.fp_class, eps));
                    (red, exact && l.fp_class != FpClass::NonFp, Some((*c, *p)))
                }
            };
            let scope = match prior {
                None => None,
                Some((c_old, t_old)) => {
                    let (a, b) = (&self.interned[c_old], &self.interned[ctx]);
                    let passes = &t.passes;
                    with_budget(&mut t.spatial_budget, limit, (oi, c_old, ctx), || {
                        brute_scope(passes, a, b, t_old, pos)
                    })
                }
            };
            t.last_on_object.insert(oi, (new.clone(), l.fp_class, ctx, pos));
            let key = self.pair_key(prior.map(|p| p.0), ctx, &scope)?;
            let okey = self.objects[oi].key.clone();
            let rec: &mut ObjectRecord = self.profile.objects.entry(okey.clone()).or_default();
            rec.counters.record(n, class, red, fp_exact);
            rec.pairs.entry(key).or_default().record(n, class, red, fp_exact);
            self.profile.spatial_totals.record(n, class, red);
            spatial = Some((okey, red));
        }
        self.verdicts.push(OracleVerdict {
            thread: tid,
            position: pos,
            temporal_redundant: redundant,
            temporal_scope,
            spatial,
        });
        Ok(())
    }
}

/// Replays `events` with full monitoring and returns ground truth.
pub fn oracle_replay(
    events: &[TraceEvent],
    map: &SourceMap,
    epsilon: f64,
    scope_budget: u32,
) -> Result<OracleResult, GenError> {
    let loads = events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Load(_)))
        .count() as u64;
    if loads > ORACLE_LOAD_LIMIT {
        return Err(GenError::TooLarge {
            limit: ORACLE_LOAD_LIMIT,
        });
    }
    let mut r = Replay {
        map,
        eps: epsilon,
        limit: scope_budget.max(1),
        interned: Vec::new(),
        ids: HashMap::new(),
        canon: HashMap::new(),
        objects: Vec::new(),
        threads: HashMap::new(),
        profile: Profile::default(),
        verdicts: Vec::new(),
    };
    for (i, ev) in events.iter().enumerate() {
        r.event(i as u64, ev).map_err(|reason| GenError::Replay {
            position: i as u64,
            reason,
        })?;
    }
    let threads: BTreeSet<u32> = events.iter().map(|e| e.thread_id).collect();
    r.profile.threads = threads.len() as u32;
    Ok(OracleResult {
        profile: r.profile,
        verdicts: r.verdicts,
    })
}

/// Ground-truth profile of a scenario under full monitoring.
pub fn expected_redundancy(s: &Scenario, epsilon: f64, scope_budget: u32) -> Result<OracleResult, GenError> {
    let (events, map) = generate(s)?;
    oracle_replay(&events, &map, epsilon, scope_budget)
}
