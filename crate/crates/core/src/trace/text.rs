//! Line-oriented text encoding, one record per line.
//!
//! ```text
//! lrt-text 1
//! site <id> <function> <file> <line>
//! loop <id> <file> <line> <parent|->
//! L <tid> <ins> <addr> <size> <hexbytes> <nonfp|f32|f64> <site>
//! C <tid> <ins> <site>
//! R <tid> <ins> <site>
//! H <tid> <ins> <loop> <site>
//! A <tid> <ins> <base> <size>
//! F <tid> <ins> <base>
//! S <tid> <ins> <count> {<name> <base> <size>}*
//! T <tid> <ins>
//! ```
//!
//! Addresses are written as `0x`-prefixed hex. Names and file paths may not
//! contain whitespace. Blank lines and lines starting with `#` are ignored.

use std::io::{BufRead, Write};

use thiserror::Error;

use super::{
    check_load_shape, check_source_map, EncodeError, EventKind, FpClass, Load, LoadValue, SourceMap,
    StaticObject, TraceEvent, Validator,
};

pub const HEADER: &str = "lrt-text 1";

#[derive(Debug, Error)]
pub enum TextError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn check_word(s: &str) -> Result<&str, EncodeError> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        Err(EncodeError::SourceMap(format!(
            "{s:?} cannot be written in the text format"
        )))
    } else {
        Ok(s)
    }
}

pub fn write_text<'a, I, W>(events: I, map: &SourceMap, mut sink: W) -> Result<(), EncodeError>
where
    I: IntoIterator<Item = &'a TraceEvent>,
    W: Write,
{
    check_source_map(map)?;
    writeln!(sink, "{HEADER}")?;
    for (id, s) in &map.sites {
        writeln!(
            sink,
            "site {id} {} {} {}",
            check_word(&s.function)?,
            check_word(&s.file)?,
            s.line
        )?;
    }
    for (id, l) in &map.loops {
        let parent = l.parent.map_or("-".to_string(), |p| p.to_string());
        writeln!(sink, "loop {id} {} {} {parent}", check_word(&l.file)?, l.line)?;
    }
    let mut validator = Validator::new(map);
    for ev in events {
        validator.check(ev)?;
        let (t, i) = (ev.thread_id, ev.ins_index);
        match &ev.kind {
            EventKind::Load(l) => {
                let hex: String = l.value.as_bytes().iter().map(|b| format!("{b:02x}")).collect();
                writeln!(
                    sink,
                    "L {t} {i} {:#x} {} {hex} {} {}",
                    l.addr,
                    l.size(),
                    l.fp_class.as_str(),
                    l.site_id
                )?;
            }
            EventKind::Call { site_id } => writeln!(sink, "C {t} {i} {site_id}")?,
            EventKind::Return { site_id } => writeln!(sink, "R {t} {i} {site_id}")?,
            EventKind::LoopHead { loop_id, site_id } => writeln!(sink, "H {t} {i} {loop_id} {site_id}")?,
            EventKind::Alloc { base, size } => writeln!(sink, "A {t} {i} {base:#x} {size}")?,
            EventKind::Free { base } => writeln!(sink, "F {t} {i} {base:#x}")?,
            EventKind::StaticImage { objects } => {
                write!(sink, "S {t} {i} {}", objects.len())?;
                for o in objects {
                    write!(sink, " {} {:#x} {}", check_word(&o.name)?, o.base, o.size)?;
                }
                writeln!(sink)?;
            }
            EventKind::ThreadStart => writeln!(sink, "T {t} {i}")?,
        }
    }
    sink.flush()?;
    Ok(())
}

struct Fields<'a> {
    it: std::str::SplitWhitespace<'a>,
    line: usize,
}

impl<'a> Fields<'a> {
    fn err(&self, msg: impl Into<String>) -> TextError {
        TextError::Parse {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn word(&mut self, what: &str) -> Result<&'a str, TextError> {
        self.it.next().ok_or_else(|| self.err(format!("missing {what}")))
    }

    fn num<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, TextError> {
        let w = self.word(what)?;
        w.parse().map_err(|_| self.err(format!("bad {what} {w:?}")))
    }

    fn addr(&mut self, what: &str) -> Result<u64, TextError> {
        let w = self.word(what)?;
        let parsed = match w.strip_prefix("0x") {
            Some(hex) => u64::from_str_radix(hex, 16),
            None => w.parse(),
        };
        parsed.map_err(|_| self.err(format!("bad {what} {w:?}")))
    }

    fn end(&mut self) -> Result<(), TextError> {
        match self.it.next() {
            None => Ok(()),
            Some(w) => Err(self.err(format!("unexpected trailing field {w:?}"))),
        }
    }
}

fn parse_hex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

/// Parses a text trace. Structural errors carry the 1-based line number.
pub fn read_text<R: BufRead>(source: R) -> Result<(Vec<TraceEvent>, SourceMap), TextError> {
    let mut map = SourceMap::new();
    let mut events = Vec::new();
    let mut seen_header = false;
    for (n, line) in source.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        let trimmed = line.trim();
        if !seen_header {
            if trimmed != HEADER {
                return Err(TextError::Parse {
                    line: lineno,
                    msg: format!("expected header {HEADER:?}"),
                });
            }
            seen_header = true;
            continue;
        }
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut f = Fields {
            it: trimmed.split_whitespace(),
            line: lineno,
        };
        let tag = f.word("record tag")?;
        match tag {
            "site" => {
                let id = f.num("site id")?;
                let function = f.word("function")?;
                let file = f.word("file")?;
                let line_no = f.num("line")?;
                map.add_site(id, function, file, line_no);
                f.end()?;
                continue;
            }
            "loop" => {
                let id = f.num("loop id")?;
                let file = f.word("file")?;
                let line_no = f.num("line")?;
                let parent = match f.word("parent")? {
                    "-" => None,
                    p => Some(p.parse().map_err(|_| f.err(format!("bad parent {p:?}")))?),
                };
                map.add_loop(id, file, line_no, parent);
                f.end()?;
                continue;
            }
            _ => {}
        }
        let thread_id = f.num("thread id")?;
        let ins_index = f.num("instruction index")?;
        let kind = match tag {
            "L" => {
                let addr = f.addr("address")?;
                let size: usize = f.num("size")?;
                let hex = f.word("value")?;
                let bytes = parse_hex(hex).ok_or_else(|| f.err(format!("bad hex {hex:?}")))?;
                if bytes.len() != size {
                    return Err(f.err(format!("{} value bytes for size {size}", bytes.len())));
                }
                let fp = f.word("fp class")?;
                let fp_class = FpClass::parse(fp).ok_or_else(|| f.err(format!("bad fp class {fp:?}")))?;
                let site_id = f.num("site id")?;
                let value = LoadValue::new(&bytes).ok_or_else(|| f.err("value too wide"))?;
                let load = Load {
                    addr,
                    value,
                    fp_class,
                    site_id,
                };
                check_load_shape(&load).map_err(|m| f.err(m))?;
                EventKind::Load(load)
            }
            "C" => EventKind::Call {
                site_id: f.num("site id")?,
            },
            "R" => EventKind::Return {
                site_id: f.num("site id")?,
            },
            "H" => EventKind::LoopHead {
                loop_id: f.num("loop id")?,
                site_id: f.num("site id")?,
            },
            "A" => EventKind::Alloc {
                base: f.addr("base")?,
                size: f.num("size")?,
            },
            "F" => EventKind::Free {
                base: f.addr("base")?,
            },
            "S" => {
                let count: usize = f.num("object count")?;
                let mut objects = Vec::new();
                for _ in 0..count {
                    let name = f.word("object name")?.to_string();
                    let base = f.addr("object base")?;
                    let size = f.num("object size")?;
                    objects.push(StaticObject { name, base, size });
                }
                EventKind::StaticImage { objects }
            }
            "T" => EventKind::ThreadStart,
            other => return Err(f.err(format!("unknown record {other:?}"))),
        };
        f.end()?;
        events.push(TraceEvent {
            thread_id,
            ins_index,
            kind,
        });
    }
    if !seen_header {
        return Err(TextError::Parse {
            line: 1,
            msg: format!("expected header {HEADER:?}"),
        });
    }
    Ok((events, map))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOLDEN: &str = "\
lrt-text 1
site 1 main main.c 1
site 2 main main.c 4
loop 5 main.c 3 -
S 0 0 1 A 0x2000 16
C 0 1 1
H 0 2 5 2
L 0 3 0x2000 4 01000000 nonfp 2
A 0 4 0x9000 64
L 0 5 0x9000 8 000000000000f03f f64 2
F 0 6 0x9000
R 0 7 1
T 1 0
";

    #[test]
    fn golden_text_round_trips() {
        let (events, map) = read_text(GOLDEN.as_bytes()).unwrap();
        assert_eq!(events.len(), 9);
        match &events[5].kind {
            EventKind::Load(l) => {
                assert_eq!(l.fp_class, FpClass::F64);
                assert_eq!(l.value, LoadValue::from_f64(1.0));
            }
            other => panic!("unexpected {other:?}"),
        }
        let mut out = Vec::new();
        write_text(&events, &map, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), GOLDEN);
    }

    #[test]
    fn reports_line_numbers() {
        let bad = "lrt-text 1\nsite 1 main main.c 1\nL 0 0 0x10 4 0100 nonfp 1\n";
        match read_text(bad.as_bytes()).unwrap_err() {
            TextError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
        assert!(read_text("nope\n".as_bytes()).is_err());
        assert!(read_text("".as_bytes()).is_err());
    }

    #[test]
    fn rejects_whitespace_in_names() {
        let mut map = SourceMap::new();
        map.add_site(1, "my func", "a.c", 1);
        assert!(write_text(&[], &map, Vec::new()).is_err());
    }
}
