//! Loop-extended calling context tree.
//!
//! Each thread owns one [`ContextTree`]. Call, return and loop-header events
//! move a cursor through the tree; every distinct root-to-node path is
//! interned once and named by a dense 32-bit [`ContextHandle`]. A per-thread
//! 64-bit clock ticks on every loop-header pass and every monitored load, and
//! each loop node remembers the clock value of its most recent pass.
//!
//! Traces carry no loop-exit events. The cursor leaves loops lazily: a return
//! unwinds every loop opened inside the returning frame, and a header pass of
//! a loop that is already on the current frame's path (or of a loop whose
//! static parent is) pops the loops nested below it.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense per-thread identifier of an interned context.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContextHandle(pub u32);

impl ContextHandle {
    pub const ROOT: ContextHandle = ContextHandle(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ContextHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ctx#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Root,
    Function,
    Loop,
    LoadSite,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextNode {
    pub kind: NodeKind,
    /// Call-site id for functions and load sites, loop id for loops.
    pub id: u32,
    pub parent: ContextHandle,
    pub depth: u32,
    /// Clock value of the latest header pass; loop nodes only.
    pub last_pass: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ContextError {
    #[error("return from site {0} with no open call")]
    ReturnWithoutCall(u32),
    #[error("return from site {got} but the innermost open call is site {expected}")]
    ReturnMismatch { expected: u32, got: u32 },
    #[error("unknown context handle {0}")]
    UnknownHandle(ContextHandle),
}

#[derive(Debug, Clone)]
pub struct ContextTree {
    nodes: Vec<ContextNode>,
    children: HashMap<(u32, NodeKind, u32), u32>,
    cursor: Vec<ContextHandle>,
    clock: u64,
    nesting: HashMap<u32, Option<u32>>,
}

impl Default for ContextTree {
    fn default() -> Self {
        Self::new()
    }
}

impl ContextTree {
    /// A tree with no static loop-nesting information: any loop not already
    /// on the current frame's path is entered as a child of the cursor.
    pub fn new() -> Self {
        Self::with_loop_nesting(HashMap::new())
    }

    /// `nesting` maps loop ids to their static parent loop (`None` for an
    /// outermost loop of its function).
    pub fn with_loop_nesting(nesting: HashMap<u32, Option<u32>>) -> Self {
        ContextTree {
            nodes: vec![ContextNode {
                kind: NodeKind::Root,
                id: 0,
                parent: ContextHandle::ROOT,
                depth: 0,
                last_pass: 0,
            }],
            children: HashMap::new(),
            cursor: vec![ContextHandle::ROOT],
            clock: 0,
            nesting,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Current clock value.
    pub fn now(&self) -> u64 {
        self.clock
    }

    /// Handle of the node under the cursor.
    pub fn current(&self) -> ContextHandle {
        *self.cursor.last().expect("cursor always holds the root")
    }

    pub fn node(&self, h: ContextHandle) -> Result<&ContextNode, ContextError> {
        self.nodes.get(h.index()).ok_or(ContextError::UnknownHandle(h))
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    fn child(&mut self, parent: ContextHandle, kind: NodeKind, id: u32) -> ContextHandle {
        if let Some(&c) = self.children.get(&(parent.0, kind, id)) {
            return ContextHandle(c);
        }
        let h = ContextHandle(self.nodes.len() as u32);
        let depth = self.nodes[parent.index()].depth + 1;
        self.nodes.push(ContextNode {
            kind,
            id,
            parent,
            depth,
            last_pass: 0,
        });
        self.children.insert((parent.0, kind, id), h.0);
        h
    }

    pub fn on_call(&mut self, site_id: u32) -> ContextHandle {
        let h = self.child(self.current(), NodeKind::Function, site_id);
        self.cursor.push(h);
        h
    }

    /// Unwinds to the caller of the innermost open frame, which must have
    /// been entered through `site_id`.
    pub fn on_return(&mut self, site_id: u32) -> Result<ContextHandle, ContextError> {
        let frame = self
            .frame_start()
            .filter(|&i| i > 0)
            .ok_or(ContextError::ReturnWithoutCall(site_id))?;
        let open = self.nodes[self.cursor[frame].index()].id;
        if open != site_id {
            return Err(ContextError::ReturnMismatch {
                expected: open,
                got: site_id,
            });
        }
        self.cursor.truncate(frame);
        Ok(self.current())
    }

    /// Index in the cursor of the innermost Function (or Root) node.
    fn frame_start(&self) -> Option<usize> {
        self.cursor
            .iter()
            .rposition(|h| matches!(self.nodes[h.index()].kind, NodeKind::Function | NodeKind::Root))
    }

    fn frame_loop_position(&self, from: usize, loop_id: u32) -> Option<usize> {
        (from + 1..self.cursor.len()).rev().find(|&i| {
            let n = &self.nodes[self.cursor[i].index()];
            n.kind == NodeKind::Loop && n.id == loop_id
        })
    }

    /// Records a header pass of `loop_id` and returns the loop's handle.
    pub fn on_loop_head(&mut self, loop_id: u32) -> ContextHandle {
        let frame = self.frame_start().unwrap_or(0);
        if let Some(i) = self.frame_loop_position(frame, loop_id) {
            // another iteration of a loop we are already in
            self.cursor.truncate(i + 1);
        } else {
            match self.nesting.get(&loop_id) {
                Some(Some(parent)) => {
                    if let Some(j) = self.frame_loop_position(frame, *parent) {
                        self.cursor.truncate(j + 1);
                    }
                }
                Some(None) => self.cursor.truncate(frame + 1),
                None => {}
            }
            let h = self.child(self.current(), NodeKind::Loop, loop_id);
            self.cursor.push(h);
        }
        let ts = self.tick();
        let h = self.current();
        self.nodes[h.index()].last_pass = ts;
        h
    }

    /// Interns the load-site node under the cursor and ticks the clock.
    pub fn current_load_context(&mut self, site_id: u32) -> (ContextHandle, u64) {
        let h = self.child(self.current(), NodeKind::LoadSite, site_id);
        (h, self.tick())
    }

    /// Leaf-to-root node list.
    pub fn path_to_root(&self, h: ContextHandle) -> Result<Vec<&ContextNode>, ContextError> {
        let mut out = Vec::new();
        let mut cur = h;
        loop {
            let n = self.node(cur)?;
            out.push(n);
            if n.kind == NodeKind::Root {
                return Ok(out);
            }
            cur = n.parent;
        }
    }

    /// Root-to-leaf handle list, root included.
    pub fn handles_from_root(&self, h: ContextHandle) -> Result<Vec<ContextHandle>, ContextError> {
        let mut out = Vec::new();
        let mut cur = h;
        loop {
            let n = self.node(cur)?;
            out.push(cur);
            if n.kind == NodeKind::Root {
                out.reverse();
                return Ok(out);
            }
            cur = n.parent;
        }
    }

    /// Lowest common ancestor of two nodes.
    pub fn lca(&self, a: ContextHandle, b: ContextHandle) -> Result<ContextHandle, ContextError> {
        let (mut a, mut b) = (a, b);
        let (mut na, mut nb) = (self.node(a)?, self.node(b)?);
        while na.depth > nb.depth {
            a = na.parent;
            na = self.node(a)?;
        }
        while nb.depth > na.depth {
            b = nb.parent;
            nb = self.node(b)?;
        }
        while a != b {
            a = na.parent;
            b = nb.parent;
            na = self.node(a)?;
            nb = self.node(b)?;
        }
        Ok(a)
    }
}
