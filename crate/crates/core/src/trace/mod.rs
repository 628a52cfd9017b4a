//! Memory-access trace model.
//!
//! A trace is a single multiplexed stream of [`TraceEvent`]s from any number
//! of threads, preceded by a [`SourceMap`] that names every code site and loop
//! the events refer to. Two encodings exist: the canonical little-endian
//! binary format in [`binary`] and a line-oriented text format in [`text`]
//! that is handy for golden files and debugging.

pub mod binary;
pub mod text;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use binary::{read_trace, write_trace, DecodeError, DecodeErrorKind, TraceReader, TraceWriter};

/// Magic bytes at the start of every binary trace.
pub const MAGIC: [u8; 4] = *b"LRT1";
/// Binary format version written after the magic.
pub const VERSION: u16 = 1;
/// Access widths a load may have.
pub const LOAD_SIZES: [usize; 6] = [1, 2, 4, 8, 16, 32];
/// Widest load, in bytes.
pub const MAX_LOAD_SIZE: usize = 32;

/// Operand class of a load, which decides precise vs. approximate comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FpClass {
    NonFp,
    F32,
    F64,
}

impl FpClass {
    /// Width of one floating-point element, or `None` for integer loads.
    pub fn element_width(self) -> Option<usize> {
        match self {
            FpClass::NonFp => None,
            FpClass::F32 => Some(4),
            FpClass::F64 => Some(8),
        }
    }

    pub fn is_fp(self) -> bool {
        self != FpClass::NonFp
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            FpClass::NonFp => 0,
            FpClass::F32 => 1,
            FpClass::F64 => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(FpClass::NonFp),
            1 => Some(FpClass::F32),
            2 => Some(FpClass::F64),
            _ => None,
        }
    }

    pub(crate) fn as_str(self) -> &'static str {
        match self {
            FpClass::NonFp => "nonfp",
            FpClass::F32 => "f32",
            FpClass::F64 => "f64",
        }
    }

    pub(crate) fn parse(s: &str) -> Option<Self> {
        match s {
            "nonfp" => Some(FpClass::NonFp),
            "f32" => Some(FpClass::F32),
            "f64" => Some(FpClass::F64),
            _ => None,
        }
    }
}

/// The raw bytes produced by one load, up to [`MAX_LOAD_SIZE`] of them.
///
/// Bytes past `len` are always zero, so derived equality compares exactly the
/// loaded bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct LoadValue {
    len: u8,
    bytes: [u8; MAX_LOAD_SIZE],
}

impl LoadValue {
    /// Returns `None` when `bytes` is longer than [`MAX_LOAD_SIZE`].
    pub fn new(bytes: &[u8]) -> Option<Self> {
        if bytes.len() > MAX_LOAD_SIZE {
            return None;
        }
        let mut buf = [0u8; MAX_LOAD_SIZE];
        buf[..bytes.len()].copy_from_slice(bytes);
        Some(LoadValue {
            len: bytes.len() as u8,
            bytes: buf,
        })
    }

    pub fn from_u32(v: u32) -> Self {
        Self::new(&v.to_le_bytes()).unwrap()
    }

    pub fn from_u64(v: u64) -> Self {
        Self::new(&v.to_le_bytes()).unwrap()
    }

    pub fn from_f32(v: f32) -> Self {
        Self::new(&v.to_le_bytes()).unwrap()
    }

    pub fn from_f64(v: f64) -> Self {
        Self::new(&v.to_le_bytes()).unwrap()
    }

    /// Packs several doubles into one wide (SIMD-style) value.
    pub fn from_f64s(vs: &[f64]) -> Option<Self> {
        let bytes: Vec<u8> = vs.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self::new(&bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes[..self.len as usize]
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl fmt::Debug for LoadValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LoadValue(")?;
        for b in self.as_bytes() {
            write!(f, "{b:02x}")?;
        }
        write!(f, ")")
    }
}

/// One executed load instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Load {
    pub addr: u64,
    pub value: LoadValue,
    pub fp_class: FpClass,
    pub site_id: u32,
}

impl Load {
    pub fn size(&self) -> usize {
        self.value.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaticObject {
    pub name: String,
    pub base: u64,
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    Load(Load),
    Call { site_id: u32 },
    Return { site_id: u32 },
    LoopHead { loop_id: u32, site_id: u32 },
    Alloc { base: u64, size: u64 },
    Free { base: u64 },
    StaticImage { objects: Vec<StaticObject> },
    ThreadStart,
}

/// A single runtime occurrence in one thread.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub thread_id: u32,
    pub ins_index: u64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SiteInfo {
    pub function: String,
    pub file: String,
    pub line: u32,
}

/// Source location of a loop header plus its static parent loop, if any.
///
/// `parent` is the innermost loop of the same function that lexically
/// encloses this one; `None` marks an outermost loop of its function. The
/// context tree uses it to tell a nested loop from a sibling loop.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LoopInfo {
    pub file: String,
    pub line: u32,
    pub parent: Option<u32>,
}

/// Resolves code-site and loop identifiers to source locations.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SourceMap {
    pub sites: BTreeMap<u32, SiteInfo>,
    pub loops: BTreeMap<u32, LoopInfo>,
}

impl SourceMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_site(&mut self, id: u32, function: &str, file: &str, line: u32) -> &mut Self {
        self.sites.insert(
            id,
            SiteInfo {
                function: function.to_string(),
                file: file.to_string(),
                line,
            },
        );
        self
    }

    pub fn add_loop(&mut self, id: u32, file: &str, line: u32, parent: Option<u32>) -> &mut Self {
        self.loops.insert(
            id,
            LoopInfo {
                file: file.to_string(),
                line,
                parent,
            },
        );
        self
    }

    pub fn site(&self, id: u32) -> Option<&SiteInfo> {
        self.sites.get(&id)
    }

    pub fn loop_info(&self, id: u32) -> Option<&LoopInfo> {
        self.loops.get(&id)
    }

    /// Static loop nesting as `loop_id -> parent`.
    pub fn loop_nesting(&self) -> HashMap<u32, Option<u32>> {
        self.loops.iter().map(|(id, l)| (*id, l.parent)).collect()
    }
}

/// Why an event sequence cannot be encoded.
#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("event {index}: {reason}")]
    Invalid { index: u64, reason: String },
    #[error("source map: {0}")]
    SourceMap(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Incremental checker for the per-event trace invariants.
#[derive(Debug)]
pub(crate) struct Validator<'m> {
    map: &'m SourceMap,
    last_ins: HashMap<u32, u64>,
    call_stacks: HashMap<u32, Vec<u32>>,
    index: u64,
}

impl<'m> Validator<'m> {
    pub(crate) fn new(map: &'m SourceMap) -> Self {
        Validator {
            map,
            last_ins: HashMap::new(),
            call_stacks: HashMap::new(),
            index: 0,
        }
    }

    pub(crate) fn check(&mut self, ev: &TraceEvent) -> Result<(), EncodeError> {
        let index = self.index;
        self.index += 1;
        let fail = |reason: String| Err(EncodeError::Invalid { index, reason });

        if let Some(&prev) = self.last_ins.get(&ev.thread_id) {
            if ev.ins_index <= prev {
                return fail(format!(
                    "ins_index {} not above previous {} on thread {}",
                    ev.ins_index, prev, ev.thread_id
                ));
            }
        }
        self.last_ins.insert(ev.thread_id, ev.ins_index);

        let site = |id: u32| self.map.site(id).is_some();
        match &ev.kind {
            EventKind::Load(load) => {
                check_load_shape(load).or_else(&fail)?;
                if !site(load.site_id) {
                    return fail(format!("unknown site {}", load.site_id));
                }
            }
            EventKind::Call { site_id } => {
                if !site(*site_id) {
                    return fail(format!("unknown site {site_id}"));
                }
                self.call_stacks.entry(ev.thread_id).or_default().push(*site_id);
            }
            EventKind::Return { site_id } => {
                let stack = self.call_stacks.entry(ev.thread_id).or_default();
                match stack.pop() {
                    Some(open) if open == *site_id => {}
                    Some(open) => {
                        return fail(format!("return from site {site_id} but innermost call is {open}"))
                    }
                    None => return fail(format!("return from site {site_id} with no open call")),
                }
            }
            EventKind::LoopHead { loop_id, site_id } => {
                if self.map.loop_info(*loop_id).is_none() {
                    return fail(format!("unknown loop {loop_id}"));
                }
                if !site(*site_id) {
                    return fail(format!("unknown site {site_id}"));
                }
            }
            EventKind::Alloc { size, .. } if *size == 0 => {
                return fail("zero-sized allocation".to_string());
            }
            EventKind::StaticImage { objects } if objects.iter().any(|o| o.size == 0) => {
                return fail("zero-sized static object".to_string());
            }
            _ => {}
        }
        Ok(())
    }
}

/// Checks size and FP-class constraints of a single load.
pub(crate) fn check_load_shape(load: &Load) -> Result<(), String> {
    let size = load.size();
    if !LOAD_SIZES.contains(&size) {
        return Err(format!("load size {size} not in {LOAD_SIZES:?}"));
    }
    if let Some(w) = load.fp_class.element_width() {
        if !size.is_multiple_of(w) {
            return Err(format!(
                "{} load of {size} bytes is not a multiple of {w}",
                load.fp_class.as_str()
            ));
        }
    }
    Ok(())
}

pub(crate) fn check_source_map(map: &SourceMap) -> Result<(), EncodeError> {
    for (id, l) in &map.loops {
        if let Some(p) = l.parent {
            if !map.loops.contains_key(&p) {
                return Err(EncodeError::SourceMap(format!(
                    "loop {id} has unknown parent loop {p}"
                )));
            }
        }
    }
    Ok(())
}
