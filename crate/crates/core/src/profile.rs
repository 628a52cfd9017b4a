//! Thread-independent profiles: handles replaced by structural context
//! paths, merged by summing rows with equal keys.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{ContextError, ContextHandle, ContextTree, NodeKind};
use crate::spatial::{object_fraction, KeyId, ObjectKey, ObjectRegistry, ObjectTally};
use crate::temporal::{program_fraction, FractionPair, ProgramTotals, RedundancyCounters, ThreadPairKey};
use crate::trace::SourceMap;

pub const PROFILE_FORMAT: &str = "loadscope-profile";
pub const PROFILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameKind {
    Function,
    Loop,
    LoadSite,
}

impl FrameKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameKind::Function => "function",
            FrameKind::Loop => "loop",
            FrameKind::LoadSite => "loadsite",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frame {
    pub kind: FrameKind,
    pub name: String,
    pub file: String,
    pub line: u32,
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} ({}:{})",
            self.kind.as_str(),
            self.name,
            self.file,
            self.line
        )
    }
}

/// Root-to-leaf frame list; the tree root itself is not included.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CanonicalContext(Arc<[Frame]>);

impl CanonicalContext {
    pub fn new(frames: Vec<Frame>) -> Self {
        CanonicalContext(frames.into())
    }

    pub fn frames(&self) -> &[Frame] {
        &self.0
    }

    pub fn leaf(&self) -> Option<&Frame> {
        self.0.last()
    }

    pub fn leaf_label(&self) -> String {
        match self.leaf() {
            Some(f) => format!("{}:{}", f.file, f.line),
            None => "<root>".to_string(),
        }
    }
}

impl fmt::Display for CanonicalContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("<root>");
        }
        for (i, fr) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" > ")?;
            }
            write!(f, "{}@{}:{}", fr.name, fr.file, fr.line)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairKey {
    pub c_old: Option<CanonicalContext>,
    pub c_new: CanonicalContext,
    pub scope: Option<CanonicalContext>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ObjectRecord {
    pub counters: RedundancyCounters,
    pub pairs: BTreeMap<PairKey, RedundancyCounters>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Profile {
    pub threads: u32,
    pub temporal_totals: ProgramTotals,
    pub pairs: BTreeMap<PairKey, RedundancyCounters>,
    pub spatial_totals: ProgramTotals,
    pub objects: BTreeMap<ObjectKey, ObjectRecord>,
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("context {handle} names site {site}, which the source map lacks")]
    UnresolvedSite { handle: ContextHandle, site: u32 },
    #[error("context {handle} names loop {id}, which the source map lacks")]
    UnresolvedLoop { handle: ContextHandle, id: u32 },
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error("malformed profile: {0}")]
    Format(String),
    #[error("profile json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Everything one thread's analysis produced, still in handle form.
#[derive(Debug, Clone, Default)]
pub struct ThreadProfile {
    pub temporal_pairs: HashMap<ThreadPairKey, RedundancyCounters>,
    pub temporal_totals: ProgramTotals,
    pub objects: HashMap<KeyId, ObjectTally>,
    pub spatial_totals: ProgramTotals,
}

/// Resolves handles of one tree to canonical paths, memoizing each node.
pub struct Canonicalizer<'a> {
    tree: &'a ContextTree,
    map: &'a SourceMap,
    memo: HashMap<ContextHandle, CanonicalContext>,
}

impl<'a> Canonicalizer<'a> {
    pub fn new(tree: &'a ContextTree, map: &'a SourceMap) -> Self {
        Canonicalizer {
            tree,
            map,
            memo: HashMap::new(),
        }
    }

    fn frame(&self, h: ContextHandle) -> Result<Option<Frame>, ProfileError> {
        let n = self.tree.node(h)?;
        let frame = match n.kind {
            NodeKind::Root => return Ok(None),
            NodeKind::Function | NodeKind::LoadSite => {
                let s = self.map.site(n.id).ok_or(ProfileError::UnresolvedSite {
                    handle: h,
                    site: n.id,
                })?;
                Frame {
                    kind: if n.kind == NodeKind::Function {
                        FrameKind::Function
                    } else {
                        FrameKind::LoadSite
                    },
                    name: s.function.clone(),
                    file: s.file.clone(),
                    line: s.line,
                }
            }
            NodeKind::Loop => {
                let l = self
                    .map
                    .loop_info(n.id)
                    .ok_or(ProfileError::UnresolvedLoop { handle: h, id: n.id })?;
                Frame {
                    kind: FrameKind::Loop,
                    name: "loop".to_string(),
                    file: l.file.clone(),
                    line: l.line,
                }
            }
        };
        Ok(Some(frame))
    }

    pub fn resolve(&mut self, h: ContextHandle) -> Result<CanonicalContext, ProfileError> {
        if let Some(c) = self.memo.get(&h) {
            return Ok(c.clone());
        }
        let n = self.tree.node(h)?;
        let ctx = match self.frame(h)? {
            None => CanonicalContext::default(),
            Some(f) => {
                let mut frames = self.resolve(n.parent)?.frames().to_vec();
                frames.push(f);
                CanonicalContext::new(frames)
            }
        };
        self.memo.insert(h, ctx.clone());
        Ok(ctx)
    }

    fn key(&mut self, k: &ThreadPairKey) -> Result<PairKey, ProfileError> {
        Ok(PairKey {
            c_old: k.c_old.map(|h| self.resolve(h)).transpose()?,
            c_new: self.resolve(k.c_new)?,
            scope: k.scope.map(|h| self.resolve(h)).transpose()?,
        })
    }
}

/// Replaces every handle of `tp` by its canonical path.
pub fn canonicalize(
    tp: &ThreadProfile,
    tree: &ContextTree,
    map: &SourceMap,
    registry: &ObjectRegistry,
) -> Result<Profile, ProfileError> {
    let mut c = Canonicalizer::new(tree, map);
    let mut p = Profile {
        threads: 1,
        temporal_totals: tp.temporal_totals,
        spatial_totals: tp.spatial_totals,
        ..Profile::default()
    };
    for (k, v) in &tp.temporal_pairs {
        p.pairs.entry(c.key(k)?).or_default().add(v);
    }
    for (key, st) in &tp.objects {
        let rec = p.objects.entry(registry.key(*key).clone()).or_default();
        rec.counters.add(&st.counters);
        for (k, v) in &st.pairs {
            rec.pairs.entry(c.key(k)?).or_default().add(v);
        }
    }
    Ok(p)
}

fn merge_rows(into: &mut BTreeMap<PairKey, RedundancyCounters>, from: BTreeMap<PairKey, RedundancyCounters>) {
    for (k, v) in from {
        into.entry(k).or_default().add(&v);
    }
}

pub fn merge(mut a: Profile, b: Profile) -> Profile {
    a.threads += b.threads;
    a.temporal_totals.add(&b.temporal_totals);
    a.spatial_totals.add(&b.spatial_totals);
    merge_rows(&mut a.pairs, b.pairs);
    for (k, rec) in b.objects {
        let into = a.objects.entry(k).or_default();
        into.counters.add(&rec.counters);
        merge_rows(&mut into.pairs, rec.pairs);
    }
    a
}

/// Balanced pairwise reduction; halves are merged in parallel.
pub fn merge_all(mut profiles: Vec<Profile>) -> Profile {
    match profiles.len() {
        0 => Profile::default(),
        1 => profiles.pop().expect("one element"),
        n => {
            let right = profiles.split_off(n / 2);
            let (l, r) = rayon::join(|| merge_all(profiles), || merge_all(right));
            merge(l, r)
        }
    }
}

fn sum_rows<'a>(rows: impl IntoIterator<Item = &'a RedundancyCounters>) -> RedundancyCounters {
    let mut s = RedundancyCounters::default();
    for r in rows {
        s.add(r);
    }
    s
}

fn matches_totals(sum: &RedundancyCounters, t: &ProgramTotals) -> bool {
    sum.total_bytes_precise == t.total_nonfp_bytes
        && sum.total_bytes_approx == t.total_fp_bytes
        && sum.redundant_bytes_precise == t.redundant_nonfp_bytes
        && sum.redundant_bytes_approx == t.redundant_fp_bytes
}

impl Profile {
    pub fn temporal_fraction(&self) -> FractionPair {
        program_fraction(&self.temporal_totals)
    }

    pub fn spatial_fraction(&self) -> FractionPair {
        program_fraction(&self.spatial_totals)
    }

    pub fn object_fraction(&self, key: &ObjectKey) -> Option<FractionPair> {
        let rec = self.objects.get(key)?;
        Some(object_fraction(
            &rec.counters,
            self.objects.values().map(|r| &r.counters),
        ))
    }

    /// Summed counters of all temporal pair rows.
    pub fn temporal_pair_sum(&self) -> RedundancyCounters {
        sum_rows(self.pairs.values())
    }

    /// Checks that rows add up to the totals and every counter is in range.
    pub fn check_conservation(&self) -> Result<(), String> {
        if !self.temporal_totals.is_consistent() || !self.spatial_totals.is_consistent() {
            return Err("program totals have redundant > total".into());
        }
        if let Some((k, _)) = self.pairs.iter().find(|(_, v)| !v.is_consistent()) {
            return Err(format!("pair row {} has redundant > total", k.c_new));
        }
        if !matches_totals(&self.temporal_pair_sum(), &self.temporal_totals) {
            return Err("temporal pair rows do not sum to program totals".into());
        }
        for (k, rec) in &self.objects {
            if !rec.counters.is_consistent() {
                return Err(format!("object {} has redundant > total", k.label()));
            }
            if sum_rows(rec.pairs.values()) != rec.counters {
                return Err(format!(
                    "pair rows of object {} do not sum to its counters",
                    k.label()
                ));
            }
        }
        let objects = sum_rows(self.objects.values().map(|r| &r.counters));
        if !matches_totals(&objects, &self.spatial_totals) {
            return Err("object counters do not sum to spatial totals".into());
        }
        for f in [self.temporal_fraction(), self.spatial_fraction()] {
            for x in [f.precise.value, f.approx.value] {
                if !(0.0..=1.0).contains(&x) {
                    return Err(format!("fraction {x} out of range"));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let doc = ProfileDoc::from(self);
        let mut s = serde_json::to_string_pretty(&doc).expect("profile serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Profile, ProfileError> {
        let doc: ProfileDoc = serde_json::from_str(text)?;
        if doc.format != PROFILE_FORMAT {
            return Err(ProfileError::Format(format!("format is {:?}", doc.format)));
        }
        if doc.version != PROFILE_VERSION {
            return Err(ProfileError::Format(format!(
                "unsupported version {}",
                doc.version
            )));
        }
        let p = doc.into_profile()?;
        p.check_conservation().map_err(ProfileError::Format)?;
        Ok(p)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairDoc {
    c_old: Option<CanonicalContext>,
    c_new: CanonicalContext,
    scope: Option<CanonicalContext>,
    counters: RedundancyCounters,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectDoc {
    key: ObjectKey,
    counters: RedundancyCounters,
    r_obj: FractionPair,
    pairs: Vec<PairDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemporalDoc {
    totals: ProgramTotals,
    r_prog: FractionPair,
    pairs: Vec<PairDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpatialDoc {
    totals: ProgramTotals,
    r_prog: FractionPair,
    objects: Vec<ObjectDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileDoc {
    format: String,
    version: u32,
    threads: u32,
    temporal: TemporalDoc,
    spatial: SpatialDoc,
}

fn pair_docs(rows: &BTreeMap<PairKey, RedundancyCounters>) -> Vec<PairDoc> {
    rows.iter()
        .map(|(k, v)| PairDoc {
            c_old: k.c_old.clone(),
            c_new: k.c_new.clone(),
            scope: k.scope.clone(),
            counters: *v,
        })
        .collect()
}

fn pair_rows(docs: Vec<PairDoc>) -> Result<BTreeMap<PairKey, RedundancyCounters>, ProfileError> {
    let mut out = BTreeMap::new();
    for d in docs {
        let key = PairKey {
            c_old: d.c_old,
            c_new: d.c_new,
            scope: d.scope,
        };
        if out.insert(key, d.counters).is_some() {
            return Err(ProfileError::Format("duplicate pair key".into()));
        }
    }
    Ok(out)
}

impl From<&Profile> for ProfileDoc {
    fn from(p: &Profile) -> Self {
        ProfileDoc {
            format: PROFILE_FORMAT.to_string(),
            version: PROFILE_VERSION,
            threads: p.threads,
            temporal: TemporalDoc {
                totals: p.temporal_totals,
                r_prog: p.temporal_fraction(),
                pairs: pair_docs(&p.pairs),
            },
            spatial: SpatialDoc {
                totals: p.spatial_totals,
                r_prog: p.spatial_fraction(),
                objects: p
                    .objects
                    .iter()
                    .map(|(k, rec)| ObjectDoc {
                        key: k.clone(),
                        counters: rec.counters,
                        r_obj: p.object_fraction(k).expect("key present"),
                        pairs: pair_docs(&rec.pairs),
                    })
                    .collect(),
            },
        }
    }
}

impl ProfileDoc {
    fn into_profile(self) -> Result<Profile, ProfileError> {
        let mut objects = BTreeMap::new();
        for o in self.spatial.objects {
            let rec = ObjectRecord {
                counters: o.counters,
                pairs: pair_rows(o.pairs)?,
            };
            if objects.insert(o.key, rec).is_some() {
                return Err(ProfileError::Format("duplicate object key".into()));
            }
        }
        Ok(Profile {
            threads: self.threads,
            temporal_totals: self.temporal.totals,
            pairs: pair_rows(self.temporal.pairs)?,
            spatial_totals: self.spatial.totals,
            objects,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::temporal::RedundancyClass;

    fn ctx(names: &[&str]) -> CanonicalContext {
        CanonicalContext::new(
            names
                .iter()
                .enumerate()
                .map(|(i, n)| Frame {
                    kind: FrameKind::Function,
                    name: n.to_string(),
                    file: "a.c".into(),
                    line: i as u32 + 1,
                })
                .collect(),
        )
    }

    fn one_row(names: &[&str], redundant: u64) -> Profile {
        let mut c = RedundancyCounters::default();
        for i in 0..redundant + 1 {
            c.record(4, RedundancyClass::Precise, i > 0, false);
        }
        let mut p = Profile {
            threads: 1,
            ..Default::default()
        };
        p.temporal_totals = ProgramTotals {
            total_nonfp_bytes: c.total_bytes_precise,
            redundant_nonfp_bytes: c.redundant_bytes_precise,
            ..Default::default()
        };
        p.pairs.insert(
            PairKey {
                c_old: Some(ctx(names)),
                c_new: ctx(names),
                scope: None,
            },
            c,
        );
        p
    }

    #[test]
    fn merge_identity_and_sum() {
        let p = one_row(&["main"], 3);
        let e = Profile { threads: 0, ..Profile::default() };
        assert_eq!(merge(p.clone(), e), p);
        let m = merge(one_row(&["main"], 3), one_row(&["main"], 5));
        assert_eq!(m.pairs.len(), 1);
        assert_eq!(m.pairs.values().next().unwrap().redundant_instances, 8);
        m.check_conservation().unwrap();
    }

    #[test]
    fn merge_all_shapes_agree() {
        let ps: Vec<Profile> = (0..5)
            .map(|i| one_row(&["main", ["f", "g"][i % 2]], i as u64))
            .collect();
        let balanced = merge_all(ps.clone());
        let left = ps.into_iter().reduce(merge).unwrap();
        assert_eq!(balanced, left);
        assert_eq!(merge_all(vec![one_row(&["x"], 1)]), one_row(&["x"], 1));
        assert_eq!(merge_all(Vec::new()), Profile::default());
    }

    #[test]
    fn json_round_trip() {
        let p = merge(one_row(&["main"], 2), one_row(&["main", "f"], 1));
        let text = p.to_json();
        assert_eq!(Profile::from_json(&text).unwrap(), p);
        assert!(Profile::from_json("{}").is_err());
        let tampered = text.replace("\"version\": 1", "\"version\": 9");
        assert!(Profile::from_json(&tampered).is_err());
    }

    #[test]
    fn canonicalize_resolves_paths() {
        let mut map = SourceMap::new();
        map.add_site(1, "main", "m.c", 1);
        map.add_site(2, "main", "m.c", 5);
        map.add_loop(7, "m.c", 4, None);
        let mut tree = ContextTree::with_loop_nesting(map.loop_nesting());
        tree.on_call(1);
        tree.on_loop_head(7);
        let (h, _) = tree.current_load_context(2);
        let mut c = Canonicalizer::new(&tree, &map);
        let cc = c.resolve(h).unwrap();
        let kinds: Vec<FrameKind> = cc.frames().iter().map(|f| f.kind).collect();
        assert_eq!(
            kinds,
            vec![FrameKind::Function, FrameKind::Loop, FrameKind::LoadSite]
        );
        assert_eq!(cc.leaf().unwrap().line, 5);

        let empty = canonicalize(&ThreadProfile::default(), &tree, &map, &ObjectRegistry::new()).unwrap();
        assert!(empty.pairs.is_empty() && empty.objects.is_empty());

        let bad = SourceMap::new();
        assert!(Canonicalizer::new(&tree, &bad).resolve(h).is_err());
    }
}
