//! Byte-granular shadow memory backed by a two-level page table.
//!
//! The directory is keyed by the high address bits (`addr >> 16`); each page
//! holds 64Ki cells stored as parallel arrays. Pages are allocated on first
//! write, so untouched address ranges cost nothing.

use std::collections::HashMap;

use arrayvec::ArrayVec;

use crate::context::ContextHandle;
use crate::trace::MAX_LOAD_SIZE;

pub const PAGE_BITS: u32 = 16;
pub const PAGE_CELLS: usize = 1 << PAGE_BITS;
const PAGE_MASK: u64 = PAGE_CELLS as u64 - 1;

/// Shadow state of one application byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ShadowCell {
    pub value: u8,
    pub ctx: ContextHandle,
    pub ts: u64,
    pub present: bool,
}

struct Page {
    values: Box<[u8]>,
    ctxs: Box<[u32]>,
    // 0 means "never loaded": load timestamps start at 1.
    stamps: Box<[u64]>,
}

impl Page {
    fn new() -> Box<Self> {
        Box::new(Page {
            values: vec![0; PAGE_CELLS].into_boxed_slice(),
            ctxs: vec![0; PAGE_CELLS].into_boxed_slice(),
            stamps: vec![0; PAGE_CELLS].into_boxed_slice(),
        })
    }
}

#[derive(Default)]
pub struct ShadowTable {
    pages: HashMap<u64, Box<Page>>,
}

impl ShadowTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of allocated pages.
    pub fn resident_pages(&self) -> usize {
        self.pages.len()
    }

    pub fn read_span(&self, addr: u64, size: usize) -> ArrayVec<ShadowCell, MAX_LOAD_SIZE> {
        let mut out = ArrayVec::new();
        let mut page_key = u64::MAX;
        let mut page: Option<&Page> = None;
        for i in 0..size.min(MAX_LOAD_SIZE) {
            let a = addr.wrapping_add(i as u64);
            if a >> PAGE_BITS != page_key {
                page_key = a >> PAGE_BITS;
                page = self.pages.get(&page_key).map(|p| &**p);
            }
            let cell = match page {
                Some(p) => {
                    let off = (a & PAGE_MASK) as usize;
                    let ts = p.stamps[off];
                    ShadowCell {
                        value: p.values[off],
                        ctx: ContextHandle(p.ctxs[off]),
                        ts,
                        present: ts != 0,
                    }
                }
                None => ShadowCell::default(),
            };
            out.push(cell);
        }
        out
    }

    /// Marks every byte of `[addr, addr + value.len())` as loaded.
    ///
    /// `ts` must be non-zero.
    pub fn write_span(&mut self, addr: u64, value: &[u8], ctx: ContextHandle, ts: u64) {
        debug_assert!(ts != 0, "timestamp 0 is reserved for absent cells");
        let mut page_key = u64::MAX;
        let mut page: Option<&mut Page> = None;
        for (i, &byte) in value.iter().enumerate() {
            let a = addr.wrapping_add(i as u64);
            if a >> PAGE_BITS != page_key || page.is_none() {
                page_key = a >> PAGE_BITS;
                page = Some(self.pages.entry(page_key).or_insert_with(Page::new));
            }
            let p = page.as_mut().expect("set above");
            let off = (a & PAGE_MASK) as usize;
            p.values[off] = byte;
            p.ctxs[off] = ctx.0;
            p.stamps[off] = ts;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap as Map;

    #[test]
    fn fresh_table_reads_absent() {
        let t = ShadowTable::new();
        let cells = t.read_span(0x1000, 4);
        assert_eq!(cells.len(), 4);
        assert!(cells.iter().all(|c| !c.present));
        assert_eq!(t.resident_pages(), 0);
    }

    #[test]
    fn read_back_after_write() {
        let mut t = ShadowTable::new();
        t.write_span(0x1000, &[1, 0, 0, 0], ContextHandle(7), 3);
        let cells = t.read_span(0x1000, 4);
        let bytes: Vec<u8> = cells.iter().map(|c| c.value).collect();
        assert_eq!(bytes, vec![1, 0, 0, 0]);
        assert!(cells
            .iter()
            .all(|c| c.present && c.ctx == ContextHandle(7) && c.ts == 3));
    }

    #[test]
    fn two_short_writes_give_mixed_span() {
        let mut t = ShadowTable::new();
        t.write_span(0x1000, &[1, 2], ContextHandle(1), 1);
        t.write_span(0x1002, &[3, 4], ContextHandle(2), 2);
        let cells = t.read_span(0x1000, 4);
        let got: Vec<(u8, u32, u64)> = cells.iter().map(|c| (c.value, c.ctx.0, c.ts)).collect();
        assert_eq!(got, vec![(1, 1, 1), (2, 1, 1), (3, 2, 2), (4, 2, 2)]);
    }

    #[test]
    fn span_crossing_page_boundary() {
        let mut t = ShadowTable::new();
        let addr = (1 << PAGE_BITS) - 2;
        t.write_span(addr, &[9, 8, 7, 6], ContextHandle(1), 5);
        assert_eq!(t.resident_pages(), 2);
        let v: Vec<u8> = t.read_span(addr, 4).iter().map(|c| c.value).collect();
        assert_eq!(v, vec![9, 8, 7, 6]);
    }

    #[test]
    fn span_wrapping_address_space() {
        let mut t = ShadowTable::new();
        t.write_span(u64::MAX - 1, &[1, 2, 3, 4], ContextHandle(1), 1);
        let v: Vec<u8> = t.read_span(0, 2).iter().map(|c| c.value).collect();
        assert_eq!(v, vec![3, 4]);
    }

    proptest! {
        #[test]
        fn read_after_write_matches_naive_map(
            writes in prop::collection::vec((0u64..300_000, prop::collection::vec(any::<u8>(), 1..=32)), 1..60)
        ) {
            let mut t = ShadowTable::new();
            let mut naive: Map<u64, (u8, u64)> = Map::new();
            let mut regions = std::collections::HashSet::new();
            for (i, (addr, bytes)) in writes.iter().enumerate() {
                let ts = i as u64 + 1;
                t.write_span(*addr, bytes, ContextHandle(i as u32), ts);
                for (k, b) in bytes.iter().enumerate() {
                    naive.insert(addr + k as u64, (*b, ts));
                    regions.insert((addr + k as u64) >> PAGE_BITS);
                }
            }
            prop_assert!(t.resident_pages() <= regions.len());
            for (addr, bytes) in &writes {
                let cells = t.read_span(*addr, bytes.len());
                for (k, c) in cells.iter().enumerate() {
                    let (v, ts) = naive[&(addr + k as u64)];
                    prop_assert!(c.present);
                    prop_assert_eq!(c.value, v);
                    prop_assert_eq!(c.ts, ts);
                    prop_assert_eq!(c.ctx.0 as u64, ts - 1);
                }
            }
        }
    }
}
