//! Redundancy scope: the outermost loop, shared by both contexts of a pair,
//! whose header ran strictly between the two loads.

use std::collections::HashMap;
use std::hash::Hash;

use crate::context::{ContextError, ContextHandle, ContextTree, NodeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScopeQuery {
    pub c_old: ContextHandle,
    pub t_old: u64,
    pub c_new: ContextHandle,
    pub t_new: u64,
}

/// Walks the root-to-LCA path and returns the first loop whose latest header
/// pass falls in `(t_old, t_new)`. `None` means the pair has no loop scope.
pub fn resolve_scope(q: &ScopeQuery, tree: &ContextTree) -> Result<Option<ContextHandle>, ContextError> {
    let lca = tree.lca(q.c_old, q.c_new)?;
    for h in tree.handles_from_root(lca)? {
        let n = tree.node(h)?;
        if n.kind == NodeKind::Loop && q.t_old < n.last_pass && n.last_pass < q.t_new {
            return Ok(Some(h));
        }
    }
    Ok(None)
}

/// Caps the number of tree walks per key. The first `limit` queries of a key
/// are resolved individually; later ones reuse the first result.
#[derive(Debug, Clone)]
pub struct ScopeBudget<K> {
    limit: u32,
    cache: HashMap<K, (u32, Option<ContextHandle>)>,
    traversals: u64,
}

impl<K: Hash + Eq> ScopeBudget<K> {
    /// A limit of 0 is treated as 1.
    pub fn new(limit: u32) -> Self {
        ScopeBudget {
            limit: limit.max(1),
            cache: HashMap::new(),
            traversals: 0,
        }
    }

    pub fn limit(&self) -> u32 {
        self.limit
    }

    /// Total tree walks performed so far.
    pub fn traversals(&self) -> u64 {
        self.traversals
    }

    pub fn resolve(
        &mut self,
        key: K,
        q: &ScopeQuery,
        tree: &ContextTree,
    ) -> Result<Option<ContextHandle>, ContextError> {
        match self.cache.get_mut(&key) {
            Some((n, first)) if *n >= self.limit => Ok(*first),
            Some((n, _)) => {
                *n += 1;
                self.traversals += 1;
                resolve_scope(q, tree)
            }
            None => {
                let r = resolve_scope(q, tree)?;
                self.traversals += 1;
                self.cache.insert(key, (1, r));
                Ok(r)
            }
        }
    }
}
