//! Canonical binary trace encoding.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! header   := "LRT1" version:u16
//! srcmap   := n_sites:u32 { id:u32 function:str file:str line:u32 }*
//!             n_loops:u32 { id:u32 file:str line:u32 has_parent:u8 parent:u32 }*
//! record   := tag:u8 thread:u32 ins:u64 payload
//! trailer  := 0xFF event_count:u64
//! str      := len:u32 utf8-bytes
//! ```
//!
//! Record payloads by tag:
//!
//! | tag | kind        | payload                                          |
//! |-----|-------------|--------------------------------------------------|
//! | 1   | Load        | addr:u64 size:u8 fp:u8 site:u32 value[size]      |
//! | 2   | Call        | site:u32                                         |
//! | 3   | Return      | site:u32                                         |
//! | 4   | LoopHead    | loop:u32 site:u32                                |
//! | 5   | Alloc       | base:u64 size:u64                                |
//! | 6   | Free        | base:u64                                         |
//! | 7   | StaticImage | n:u32 { name:str base:u64 size:u64 }*            |
//! | 8   | ThreadStart | (empty)                                          |
//!
//! The explicit trailer makes every truncation detectable, including one
//! that happens to fall on a record boundary.

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{
    check_load_shape, check_source_map, EncodeError, EventKind, FpClass, Load, LoadValue, SourceMap,
    StaticObject, TraceEvent, Validator, MAGIC, VERSION,
};

const TAG_LOAD: u8 = 1;
const TAG_CALL: u8 = 2;
const TAG_RETURN: u8 = 3;
const TAG_LOOP_HEAD: u8 = 4;
const TAG_ALLOC: u8 = 5;
const TAG_FREE: u8 = 6;
const TAG_STATIC_IMAGE: u8 = 7;
const TAG_THREAD_START: u8 = 8;
const TAG_END: u8 = 0xFF;

/// Upper bound on any length-prefixed string, to keep garbage input from
/// requesting huge buffers.
const MAX_STR_LEN: u32 = 1 << 20;
const MAX_STATIC_OBJECTS: u32 = 1 << 20;

#[derive(Debug, Error)]
pub enum DecodeErrorKind {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated record")]
    Truncated,
    #[error("unknown event kind {0:#04x}")]
    UnknownKind(u8),
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("i/o error: {0}")]
    Io(io::Error),
}

/// A decode failure together with the byte offset of the offending record
/// (or header section).
#[derive(Debug, Error)]
#[error("decode error at byte offset {offset}: {kind}")]
pub struct DecodeError {
    pub offset: u64,
    pub kind: DecodeErrorKind,
}

struct Input<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Input<R> {
    fn fill(&mut self, buf: &mut [u8], start: u64) -> Result<(), DecodeError> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(DecodeError {
                offset: start,
                kind: DecodeErrorKind::Truncated,
            }),
            Err(e) => Err(DecodeError {
                offset: start,
                kind: DecodeErrorKind::Io(e),
            }),
        }
    }

    fn array<const N: usize>(&mut self, start: u64) -> Result<[u8; N], DecodeError> {
        let mut buf = [0u8; N];
        self.fill(&mut buf, start)?;
        Ok(buf)
    }

    fn u8(&mut self, start: u64) -> Result<u8, DecodeError> {
        Ok(self.array::<1>(start)?[0])
    }

    fn u16(&mut self, start: u64) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.array(start)?))
    }

    fn u32(&mut self, start: u64) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.array(start)?))
    }

    fn u64(&mut self, start: u64) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.array(start)?))
    }

    fn string(&mut self, start: u64) -> Result<String, DecodeError> {
        let len = self.u32(start)?;
        if len > MAX_STR_LEN {
            return Err(invalid(start, format!("string length {len} exceeds limit")));
        }
        let mut buf = vec![0u8; len as usize];
        self.fill(&mut buf, start)?;
        String::from_utf8(buf).map_err(|_| invalid(start, "string is not utf-8".to_string()))
    }
}

fn invalid(offset: u64, msg: String) -> DecodeError {
    DecodeError {
        offset,
        kind: DecodeErrorKind::InvalidField(msg),
    }
}

/// Streaming reader over a binary trace.
///
/// The source map is decoded eagerly by [`TraceReader::new`]; events are
/// decoded one at a time by the iterator, so memory use does not depend on the
/// trace length.
pub struct TraceReader<R> {
    input: Input<R>,
    map: SourceMap,
    events_read: u64,
    finished: bool,
}

impl<R: Read> TraceReader<R> {
    pub fn new(source: R) -> Result<Self, DecodeError> {
        let mut input = Input {
            inner: source,
            offset: 0,
        };
        let magic: [u8; 4] = input.array(0).map_err(|e| DecodeError {
            offset: 0,
            kind: match e.kind {
                DecodeErrorKind::Truncated => DecodeErrorKind::BadMagic,
                k => k,
            },
        })?;
        if magic != MAGIC {
            return Err(DecodeError {
                offset: 0,
                kind: DecodeErrorKind::BadMagic,
            });
        }
        let version = input.u16(4)?;
        if version != VERSION {
            return Err(DecodeError {
                offset: 4,
                kind: DecodeErrorKind::UnsupportedVersion(version),
            });
        }

        let mut map = SourceMap::new();
        let start = input.offset;
        let n_sites = input.u32(start)?;
        for _ in 0..n_sites {
            let start = input.offset;
            let id = input.u32(start)?;
            let function = input.string(start)?;
            let file = input.string(start)?;
            let line = input.u32(start)?;
            map.add_site(id, &function, &file, line);
        }
        let start = input.offset;
        let n_loops = input.u32(start)?;
        for _ in 0..n_loops {
            let start = input.offset;
            let id = input.u32(start)?;
            let file = input.string(start)?;
            let line = input.u32(start)?;
            let parent = match input.u8(start)? {
                0 => {
                    input.u32(start)?;
                    None
                }
                1 => Some(input.u32(start)?),
                other => return Err(invalid(start, format!("loop parent flag {other}"))),
            };
            map.add_loop(id, &file, line, parent);
        }
        check_source_map(&map).map_err(|e| invalid(start, e.to_string()))?;

        Ok(TraceReader {
            input,
            map,
            events_read: 0,
            finished: false,
        })
    }

    pub fn source_map(&self) -> &SourceMap {
        &self.map
    }

    /// Byte offset of the next unread record.
    pub fn offset(&self) -> u64 {
        self.input.offset
    }

    fn next_event(&mut self) -> Result<Option<TraceEvent>, DecodeError> {
        let start = self.input.offset;
        let tag = self.input.u8(start)?;
        if tag == TAG_END {
            let count = self.input.u64(start)?;
            if count != self.events_read {
                return Err(invalid(
                    start,
                    format!("trailer counts {count} events, read {}", self.events_read),
                ));
            }
            return Ok(None);
        }
        if !(TAG_LOAD..=TAG_THREAD_START).contains(&tag) {
            return Err(DecodeError {
                offset: start,
                kind: DecodeErrorKind::UnknownKind(tag),
            });
        }
        let thread_id = self.input.u32(start)?;
        let ins_index = self.input.u64(start)?;
        let kind = match tag {
            TAG_LOAD => {
                let addr = self.input.u64(start)?;
                let size = self.input.u8(start)? as usize;
                let fp = self.input.u8(start)?;
                let site_id = self.input.u32(start)?;
                let fp_class =
                    FpClass::from_tag(fp).ok_or_else(|| invalid(start, format!("fp class {fp}")))?;
                if !super::LOAD_SIZES.contains(&size) {
                    return Err(invalid(start, format!("load size {size}")));
                }
                let mut buf = [0u8; super::MAX_LOAD_SIZE];
                self.input.fill(&mut buf[..size], start)?;
                let load = Load {
                    addr,
                    value: LoadValue::new(&buf[..size]).expect("size checked"),
                    fp_class,
                    site_id,
                };
                check_load_shape(&load).map_err(|m| invalid(start, m))?;
                EventKind::Load(load)
            }
            TAG_CALL => EventKind::Call {
                site_id: self.input.u32(start)?,
            },
            TAG_RETURN => EventKind::Return {
                site_id: self.input.u32(start)?,
            },
            TAG_LOOP_HEAD => EventKind::LoopHead {
                loop_id: self.input.u32(start)?,
                site_id: self.input.u32(start)?,
            },
            TAG_ALLOC => EventKind::Alloc {
                base: self.input.u64(start)?,
                size: self.input.u64(start)?,
            },
            TAG_FREE => EventKind::Free {
                base: self.input.u64(start)?,
            },
            TAG_STATIC_IMAGE => {
                let n = self.input.u32(start)?;
                if n > MAX_STATIC_OBJECTS {
                    return Err(invalid(start, format!("{n} static objects exceeds limit")));
                }
                let mut objects = Vec::new();
                for _ in 0..n {
                    let name = self.input.string(start)?;
                    let base = self.input.u64(start)?;
                    let size = self.input.u64(start)?;
                    objects.push(StaticObject { name, base, size });
                }
                EventKind::StaticImage { objects }
            }
            TAG_THREAD_START => EventKind::ThreadStart,
            _ => unreachable!("tag range checked above"),
        };
        self.events_read += 1;
        Ok(Some(TraceEvent {
            thread_id,
            ins_index,
            kind,
        }))
    }
}

impl<R: Read> Iterator for TraceReader<R> {
    type Item = Result<TraceEvent, DecodeError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.finished {
            return None;
        }
        match self.next_event() {
            Ok(Some(ev)) => Some(Ok(ev)),
            Ok(None) => {
                self.finished = true;
                None
            }
            Err(e) => {
                self.finished = true;
                Some(Err(e))
            }
        }
    }
}

/// Decodes a whole trace into memory.
pub fn read_trace<R: Read>(source: R) -> Result<(Vec<TraceEvent>, SourceMap), DecodeError> {
    let mut reader = TraceReader::new(source)?;
    let events = reader.by_ref().collect::<Result<Vec<_>, _>>()?;
    Ok((events, reader.map))
}

struct Output<W> {
    inner: W,
    written: u64,
}

impl<W: Write> Output<W> {
    fn put(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.inner.write_all(bytes)?;
        self.written += bytes.len() as u64;
        Ok(())
    }

    fn string(&mut self, s: &str) -> Result<(), EncodeError> {
        if s.len() > MAX_STR_LEN as usize {
            return Err(EncodeError::SourceMap(format!(
                "string of {} bytes too long",
                s.len()
            )));
        }
        self.put(&(s.len() as u32).to_le_bytes())?;
        self.put(s.as_bytes())?;
        Ok(())
    }
}

/// Streaming writer that validates each event before encoding it.
pub struct TraceWriter<'m, W: Write> {
    out: Output<W>,
    validator: Validator<'m>,
    events: u64,
}

impl<'m, W: Write> TraceWriter<'m, W> {
    /// Writes the header and source map.
    pub fn new(sink: W, map: &'m SourceMap) -> Result<Self, EncodeError> {
        check_source_map(map)?;
        let mut out = Output {
            inner: sink,
            written: 0,
        };
        out.put(&MAGIC)?;
        out.put(&VERSION.to_le_bytes())?;
        out.put(&(map.sites.len() as u32).to_le_bytes())?;
        for (id, s) in &map.sites {
            out.put(&id.to_le_bytes())?;
            out.string(&s.function)?;
            out.string(&s.file)?;
            out.put(&s.line.to_le_bytes())?;
        }
        out.put(&(map.loops.len() as u32).to_le_bytes())?;
        for (id, l) in &map.loops {
            out.put(&id.to_le_bytes())?;
            out.string(&l.file)?;
            out.put(&l.line.to_le_bytes())?;
            out.put(&[l.parent.is_some() as u8])?;
            out.put(&l.parent.unwrap_or(0).to_le_bytes())?;
        }
        Ok(TraceWriter {
            out,
            validator: Validator::new(map),
            events: 0,
        })
    }

    pub fn write_event(&mut self, ev: &TraceEvent) -> Result<(), EncodeError> {
        self.validator.check(ev)?;
        let out = &mut self.out;
        let tag = match &ev.kind {
            EventKind::Load(_) => TAG_LOAD,
            EventKind::Call { .. } => TAG_CALL,
            EventKind::Return { .. } => TAG_RETURN,
            EventKind::LoopHead { .. } => TAG_LOOP_HEAD,
            EventKind::Alloc { .. } => TAG_ALLOC,
            EventKind::Free { .. } => TAG_FREE,
            EventKind::StaticImage { .. } => TAG_STATIC_IMAGE,
            EventKind::ThreadStart => TAG_THREAD_START,
        };
        out.put(&[tag])?;
        out.put(&ev.thread_id.to_le_bytes())?;
        out.put(&ev.ins_index.to_le_bytes())?;
        match &ev.kind {
            EventKind::Load(l) => {
                out.put(&l.addr.to_le_bytes())?;
                out.put(&[l.size() as u8, l.fp_class.tag()])?;
                out.put(&l.site_id.to_le_bytes())?;
                out.put(l.value.as_bytes())?;
            }
            EventKind::Call { site_id } | EventKind::Return { site_id } => {
                out.put(&site_id.to_le_bytes())?;
            }
            EventKind::LoopHead { loop_id, site_id } => {
                out.put(&loop_id.to_le_bytes())?;
                out.put(&site_id.to_le_bytes())?;
            }
            EventKind::Alloc { base, size } => {
                out.put(&base.to_le_bytes())?;
                out.put(&size.to_le_bytes())?;
            }
            EventKind::Free { base } => out.put(&base.to_le_bytes())?,
            EventKind::StaticImage { objects } => {
                out.put(&(objects.len() as u32).to_le_bytes())?;
                for o in objects {
                    out.string(&o.name)?;
                    out.put(&o.base.to_le_bytes())?;
                    out.put(&o.size.to_le_bytes())?;
                }
            }
            EventKind::ThreadStart => {}
        }
        self.events += 1;
        Ok(())
    }

    /// Writes the trailer, flushes, and returns the total byte count.
    pub fn finish(mut self) -> Result<u64, EncodeError> {
        self.out.put(&[TAG_END])?;
        self.out.put(&self.events.to_le_bytes())?;
        self.out.inner.flush()?;
        Ok(self.out.written)
    }
}

/// Encodes `events` after `map` into `sink`, returning the byte count.
pub fn write_trace<'a, I, W>(events: I, map: &SourceMap, sink: W) -> Result<u64, EncodeError>
where
    I: IntoIterator<Item = &'a TraceEvent>,
    W: Write,
{
    let mut w = TraceWriter::new(sink, map)?;
    for ev in events {
        w.write_event(ev)?;
    }
    w.finish()
}
