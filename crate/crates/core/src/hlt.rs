//! Fully-dynamic connectivity with level-tiered spanning forests.
//!
//! Every edge has a level. Forest `F_i` holds the tree edges of level at
//! least `i`, each `F_i` stored as Euler tours in treaps. Deleting a tree
//! edge searches for a replacement from its level downward; tree edges of
//! the smaller side and non-tree edges that fail to reconnect are promoted,
//! which bounds the total work by the number of levels.
//!
//! [`ProxyGraph`] puts cell-keyed vertices and refcounted undirected edges on
//! top.

use std::collections::BTreeSet;

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::geometry::Cell;

const NIL: u32 = u32::MAX;
const F_TREE: u8 = 1;
const F_NONTREE: u8 = 2;
const F_VERTEX: u8 = 4;

#[derive(Clone, Debug)]
struct TNode {
    l: u32,
    r: u32,
    p: u32,
    prio: u32,
    size: u32,
    vcnt: u32,
    own: u8,
    agg: u8,
    /// Vertex id, or the arc's endpoints.
    a: u32,
    b: u32,
}

/// Treap arena shared by the Euler tours of every level.
#[derive(Clone, Debug, Default)]
struct Tours {
    n: Vec<TNode>,
    free: Vec<u32>,
    seed: u64,
}

impl Tours {
    fn next_prio(&mut self) -> u32 {
        // splitmix64
        self.seed = self.seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.seed;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        (z ^ (z >> 31)) as u32
    }

    fn alloc(&mut self, vertex: bool, a: u32, b: u32) -> u32 {
        let own = if vertex { F_VERTEX } else { 0 };
        let node = TNode {
            l: NIL,
            r: NIL,
            p: NIL,
            prio: self.next_prio(),
            size: 1,
            vcnt: u32::from(vertex),
            own,
            agg: 0,
            a,
            b,
        };
        if let Some(i) = self.free.pop() {
            self.n[i as usize] = node;
            i
        } else {
            self.n.push(node);
            (self.n.len() - 1) as u32
        }
    }

    fn release(&mut self, x: u32) {
        debug_assert!(self.n[x as usize].size == 1 && self.n[x as usize].p == NIL);
        self.free.push(x);
    }

    fn size(&self, x: u32) -> u32 {
        if x == NIL {
            0
        } else {
            self.n[x as usize].size
        }
    }

    fn agg(&self, x: u32) -> u8 {
        if x == NIL {
            0
        } else {
            self.n[x as usize].agg
        }
    }

    fn update(&mut self, x: u32) {
        let (l, r) = (self.n[x as usize].l, self.n[x as usize].r);
        let size = 1 + self.size(l) + self.size(r);
        let vl = if l == NIL { 0 } else { self.n[l as usize].vcnt };
        let vr = if r == NIL { 0 } else { self.n[r as usize].vcnt };
        let node = &self.n[x as usize];
        let vcnt = vl + vr + u32::from(node.own & F_VERTEX != 0);
        let agg = (node.own & (F_TREE | F_NONTREE)) | self.agg(l) | self.agg(r);
        let node = &mut self.n[x as usize];
        node.size = size;
        node.vcnt = vcnt;
        node.agg = agg;
    }

    fn set_parent(&mut self, x: u32, p: u32) {
        if x != NIL {
            self.n[x as usize].p = p;
        }
    }

    fn merge(&mut self, a: u32, b: u32) -> u32 {
        if a == NIL {
            return b;
        }
        if b == NIL {
            return a;
        }
        if self.n[a as usize].prio >= self.n[b as usize].prio {
            let ar = self.n[a as usize].r;
            let m = self.merge(ar, b);
            self.n[a as usize].r = m;
            self.set_parent(m, a);
            self.update(a);
            self.n[a as usize].p = NIL;
            a
        } else {
            let bl = self.n[b as usize].l;
            let m = self.merge(a, bl);
            self.n[b as usize].l = m;
            self.set_parent(m, b);
            self.update(b);
            self.n[b as usize].p = NIL;
            b
        }
    }

    /// First `k` nodes and the rest.
    fn split(&mut self, t: u32, k: u32) -> (u32, u32) {
        if t == NIL {
            return (NIL, NIL);
        }
        let l = self.n[t as usize].l;
        let ls = self.size(l);
        if k <= ls {
            let (a, b) = self.split(l, k);
            self.n[t as usize].l = b;
            self.set_parent(b, t);
            self.update(t);
            self.set_parent(a, NIL);
            self.n[t as usize].p = NIL;
            (a, t)
        } else {
            let r = self.n[t as usize].r;
            let (a, b) = self.split(r, k - ls - 1);
            self.n[t as usize].r = a;
            self.set_parent(a, t);
            self.update(t);
            self.set_parent(b, NIL);
            self.n[t as usize].p = NIL;
            (t, b)
        }
    }

    fn root(&self, mut x: u32) -> u32 {
        while self.n[x as usize].p != NIL {
            x = self.n[x as usize].p;
        }
        x
    }

    /// Zero-based position of `x` in its sequence.
    fn rank(&self, mut x: u32) -> u32 {
        let mut r = self.size(self.n[x as usize].l);
        loop {
            let p = self.n[x as usize].p;
            if p == NIL {
                return r;
            }
            if self.n[p as usize].r == x {
                r += self.size(self.n[p as usize].l) + 1;
            }
            x = p;
        }
    }

    fn set_flag(&mut self, x: u32, flag: u8, on: bool) {
        let node = &mut self.n[x as usize];
        if on {
            node.own |= flag;
        } else {
            node.own &= !flag;
        }
        let mut cur = x;
        while cur != NIL {
            self.update(cur);
            cur = self.n[cur as usize].p;
        }
    }

    /// Leftmost node in the tree of `root` whose own flags include `flag`.
    fn find_flag(&self, root: u32, flag: u8) -> Option<u32> {
        if self.agg(root) & flag == 0 {
            return None;
        }
        let mut x = root;
        loop {
            let node = &self.n[x as usize];
            if self.agg(node.l) & flag != 0 {
                x = node.l;
            } else if node.own & flag != 0 {
                return Some(x);
            } else {
                x = node.r;
            }
        }
    }

    /// Rotate the tour so that `x` comes first; returns the new root.
    fn reroot(&mut self, x: u32) -> u32 {
        let root = self.root(x);
        let k = self.rank(x);
        let (a, b) = self.split(root, k);
        self.merge(b, a)
    }
}

#[derive(Clone, Debug, Default)]
struct Level {
    /// Vertex occurrence node per vertex, allocated lazily.
    vnode: Vec<u32>,
    /// Directed arc nodes of tree edges at this level or above.
    arcs: FxHashMap<(u32, u32), u32>,
    /// Non-tree edges of exactly this level.
    nontree: Vec<BTreeSet<u32>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct EdgeInfo {
    level: u8,
    tree: bool,
}

fn norm(u: u32, v: u32) -> (u32, u32) {
    (u.min(v), u.max(v))
}

/// Dynamic connectivity over vertices `0..capacity`.
#[derive(Clone, Debug, Default)]
pub struct Hlt {
    tours: Tours,
    levels: Vec<Level>,
    edges: FxHashMap<(u32, u32), EdgeInfo>,
    present: Vec<bool>,
    degree: Vec<u32>,
    live: u32,
    high_water: u32,
    touches: u64,
}

impl Hlt {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn vertex_count(&self) -> usize {
        self.live as usize
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges inspected or promoted during replacement searches.
    pub fn touches(&self) -> u64 {
        self.touches
    }

    pub fn has_vertex(&self, v: u32) -> bool {
        self.present.get(v as usize).copied().unwrap_or(false)
    }

    pub fn has_edge(&self, u: u32, v: u32) -> bool {
        self.edges.contains_key(&norm(u, v))
    }

    fn ensure_level(&mut self, i: usize) {
        while self.levels.len() <= i {
            self.levels.push(Level::default());
        }
        let cap = self.present.len();
        let lv = &mut self.levels[i];
        if lv.vnode.len() < cap {
            lv.vnode.resize(cap, NIL);
            lv.nontree.resize(cap, BTreeSet::new());
        }
    }

    fn vnode(&mut self, i: usize, v: u32) -> u32 {
        self.ensure_level(i);
        let x = self.levels[i].vnode[v as usize];
        if x != NIL {
            return x;
        }
        let x = self.tours.alloc(true, v, v);
        self.levels[i].vnode[v as usize] = x;
        x
    }

    pub fn add_vertex(&mut self, v: u32) -> Result<()> {
        let i = v as usize;
        if self.present.len() <= i {
            self.present.resize(i + 1, false);
            self.degree.resize(i + 1, 0);
        }
        if self.present[i] {
            return Err(Error::MissingEntry(format!("vertex {v} already present")));
        }
        self.present[i] = true;
        self.live += 1;
        self.high_water = self.high_water.max(self.live);
        self.vnode(0, v);
        Ok(())
    }

    pub fn remove_vertex(&mut self, v: u32) -> Result<()> {
        if !self.has_vertex(v) {
            return Err(Error::MissingEntry(format!("vertex {v}")));
        }
        if self.degree[v as usize] > 0 {
            return Err(Error::MissingEntry(format!("vertex {v} has edges")));
        }
        for lv in &mut self.levels {
            if let Some(x) = lv.vnode.get_mut(v as usize) {
                if *x != NIL {
                    self.tours.release(*x);
                    *x = NIL;
                }
            }
        }
        self.present[v as usize] = false;
        self.live -= 1;
        Ok(())
    }

    fn tree_root(&mut self, i: usize, v: u32) -> u32 {
        let x = self.vnode(i, v);
        self.tours.root(x)
    }

    pub fn connected(&self, u: u32, v: u32) -> Result<bool> {
        for x in [u, v] {
            if !self.has_vertex(x) {
                return Err(Error::MissingEntry(format!("vertex {x}")));
            }
        }
        let lv = &self.levels[0];
        Ok(self.tours.root(lv.vnode[u as usize]) == self.tours.root(lv.vnode[v as usize]))
    }

    fn link(&mut self, i: usize, u: u32, v: u32, flagged: bool) {
        let (xu, xv) = (self.vnode(i, u), self.vnode(i, v));
        let ru = self.tours.reroot(xu);
        let rv = self.tours.reroot(xv);
        let a1 = self.tours.alloc(false, u, v);
        let a2 = self.tours.alloc(false, v, u);
        self.levels[i].arcs.insert((u, v), a1);
        self.levels[i].arcs.insert((v, u), a2);
        let canon = if u < v { a1 } else { a2 };
        if flagged {
            self.tours.set_flag(canon, F_TREE, true);
        }
        let t = self.tours.merge(ru, a1);
        let t = self.tours.merge(t, rv);
        self.tours.merge(t, a2);
    }

    fn cut(&mut self, i: usize, u: u32, v: u32) {
        let mut a1 = self.levels[i].arcs.remove(&(u, v)).expect("missing arc");
        let mut a2 = self.levels[i].arcs.remove(&(v, u)).expect("missing arc");
        let root = self.tours.root(a1);
        let (mut r1, mut r2) = (self.tours.rank(a1), self.tours.rank(a2));
        if r1 > r2 {
            std::mem::swap(&mut a1, &mut a2);
            std::mem::swap(&mut r1, &mut r2);
        }
        let (a, rest) = self.tours.split(root, r1);
        let (x1, rest) = self.tours.split(rest, 1);
        let (_b, rest) = self.tours.split(rest, r2 - r1 - 1);
        let (x2, c) = self.tours.split(rest, 1);
        debug_assert!(x1 == a1 && x2 == a2);
        self.tours.merge(a, c);
        for x in [a1, a2] {
            self.tours.n[x as usize].own = 0;
            self.tours.update(x);
            self.tours.release(x);
        }
    }

    fn set_nontree(&mut self, i: usize, u: u32, v: u32, on: bool) {
        self.ensure_level(i);
        for (a, b) in [(u, v), (v, u)] {
            let set = &mut self.levels[i].nontree[a as usize];
            if on {
                set.insert(b);
            } else {
                set.remove(&b);
            }
            let has = !set.is_empty();
            let x = self.vnode(i, a);
            self.tours.set_flag(x, F_NONTREE, has);
        }
    }

    pub fn insert_edge(&mut self, u: u32, v: u32) -> Result<()> {
        if !self.has_vertex(u) || !self.has_vertex(v) || u == v {
            return Err(Error::MissingEntry(format!("edge {u}-{v} endpoints")));
        }
        let key = norm(u, v);
        if self.edges.contains_key(&key) {
            return Err(Error::DuplicateEntry(format!("edge {u}-{v}")));
        }
        let tree = !self.connected(u, v)?;
        if tree {
            self.link(0, u, v, true);
        } else {
            self.set_nontree(0, u, v, true);
        }
        self.edges.insert(key, EdgeInfo { level: 0, tree });
        self.degree[u as usize] += 1;
        self.degree[v as usize] += 1;
        Ok(())
    }

    pub fn delete_edge(&mut self, u: u32, v: u32) -> Result<()> {
        let key = norm(u, v);
        let info = self
            .edges
            .remove(&key)
            .ok_or_else(|| Error::MissingEntry(format!("edge {u}-{v}")))?;
        self.degree[u as usize] -= 1;
        self.degree[v as usize] -= 1;
        let l = info.level as usize;
        if !info.tree {
            self.set_nontree(l, u, v, false);
            return Ok(());
        }
        for i in 0..=l {
            self.cut(i, u, v);
        }
        for i in (0..=l).rev() {
            if self.replace(i, u, v) {
                break;
            }
        }
        Ok(())
    }

    /// Look for a level-`i` replacement edge reconnecting the trees of `u`
    /// and `v` in `F_i`.
    fn replace(&mut self, i: usize, u: u32, v: u32) -> bool {
        let (ru, rv) = (self.tree_root(i, u), self.tree_root(i, v));
        let small = if self.tours.n[ru as usize].vcnt <= self.tours.n[rv as usize].vcnt {
            u
        } else {
            v
        };
        // Promote the smaller tree's level-i tree edges.
        loop {
            let root = self.tree_root(i, small);
            let Some(x) = self.tours.find_flag(root, F_TREE) else {
                break;
            };
            let (a, b) = (self.tours.n[x as usize].a, self.tours.n[x as usize].b);
            self.touches += 1;
            self.tours.set_flag(x, F_TREE, false);
            let e = self.edges.get_mut(&norm(a, b)).unwrap();
            e.level += 1;
            self.ensure_level(i + 1);
            self.link(i + 1, a, b, true);
        }
        // Scan the smaller tree's level-i non-tree edges.
        loop {
            let root = self.tree_root(i, small);
            let Some(x) = self.tours.find_flag(root, F_NONTREE) else {
                return false;
            };
            let a = self.tours.n[x as usize].a;
            let nbrs: Vec<u32> = self.levels[i].nontree[a as usize].iter().copied().collect();
            for b in nbrs {
                self.touches += 1;
                let other = self.tree_root(i, b);
                let here = self.tree_root(i, a);
                self.set_nontree(i, a, b, false);
                if other != here {
                    let e = self.edges.get_mut(&norm(a, b)).unwrap();
                    e.tree = true;
                    for j in 0..=i {
                        self.link(j, a, b, j == i);
                    }
                    return true;
                }
                let e = self.edges.get_mut(&norm(a, b)).unwrap();
                e.level += 1;
                self.set_nontree(i + 1, a, b, true);
            }
        }
    }

    /// Verify forests, flags, edge placement and the tree-size bound.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mut arcs_expected = vec![0usize; self.levels.len()];
        for (&(u, v), e) in &self.edges {
            let l = e.level as usize;
            if l >= self.levels.len() {
                return Err(format!("edge {u}-{v} above the top level"));
            }
            if e.tree {
                for (i, lv) in self.levels.iter().enumerate() {
                    let has = lv.arcs.contains_key(&(u, v)) && lv.arcs.contains_key(&(v, u));
                    if has != (i <= l) {
                        return Err(format!("tree edge {u}-{v} misplaced at level {i}"));
                    }
                    if i <= l {
                        arcs_expected[i] += 2;
                        let canon = lv.arcs[&(u, v)];
                        let flag = self.tours.n[canon as usize].own & F_TREE != 0;
                        if flag != (i == l) {
                            return Err(format!("tree flag of {u}-{v} wrong at level {i}"));
                        }
                    }
                }
            } else {
                let lv = &self.levels[l];
                if !lv.nontree[u as usize].contains(&v) || !lv.nontree[v as usize].contains(&u) {
                    return Err(format!("non-tree edge {u}-{v} missing from level {l}"));
                }
                let (xu, xv) = (lv.vnode[u as usize], lv.vnode[v as usize]);
                if xu == NIL || xv == NIL || self.tours.root(xu) != self.tours.root(xv) {
                    return Err(format!("non-tree edge {u}-{v} spans two level-{l} trees"));
                }
            }
        }
        let bound = |i: usize| (self.high_water >> i.min(31)).max(1);
        for (i, lv) in self.levels.iter().enumerate() {
            if lv.arcs.len() != arcs_expected[i] {
                return Err(format!("stray arcs at level {i}"));
            }
            let nontree_total: usize = lv.nontree.iter().map(|s| s.len()).sum();
            let nontree_want = self
                .edges
                .values()
                .filter(|e| !e.tree && e.level as usize == i)
                .count();
            if nontree_total != 2 * nontree_want {
                return Err(format!("stray non-tree entries at level {i}"));
            }
            let mut roots = BTreeSet::new();
            for (v, &x) in lv.vnode.iter().enumerate() {
                if x == NIL {
                    continue;
                }
                if !self.has_vertex(v as u32) {
                    return Err(format!("removed vertex {v} still has a tour node"));
                }
                let has = !lv.nontree[v].is_empty();
                if (self.tours.n[x as usize].own & F_NONTREE != 0) != has {
                    return Err(format!("non-tree flag of {v} wrong at level {i}"));
                }
                roots.insert(self.tours.root(x));
            }
            for r in roots {
                let node = &self.tours.n[r as usize];
                let arcs = node.size - node.vcnt;
                if arcs != 2 * (node.vcnt - 1) {
                    return Err(format!("level {i} tour is not a tree"));
                }
                if i > 0 && node.vcnt > bound(i) {
                    return Err(format!(
                        "level {i} tree has {} vertices, bound {}",
                        node.vcnt,
                        bound(i)
                    ));
                }
                self.check_aggregates(r)?;
            }
        }
        Ok(())
    }

    fn check_aggregates(&self, x: u32) -> std::result::Result<(u32, u32, u8), String> {
        if x == NIL {
            return Ok((0, 0, 0));
        }
        let n = &self.tours.n[x as usize];
        for c in [n.l, n.r] {
            if c != NIL && self.tours.n[c as usize].p != x {
                return Err("broken tour parent link".into());
            }
        }
        let (ls, lv, la) = self.check_aggregates(n.l)?;
        let (rs, rv, ra) = self.check_aggregates(n.r)?;
        let size = ls + rs + 1;
        let vcnt = lv + rv + u32::from(n.own & F_VERTEX != 0);
        let agg = la | ra | (n.own & (F_TREE | F_NONTREE));
        if (size, vcnt, agg) != (n.size, n.vcnt, n.agg) {
            return Err("stale tour aggregate".into());
        }
        Ok((size, vcnt, agg))
    }
}

/// Undirected graph over storing cells with refcounted edges.
#[derive(Clone, Debug, Default)]
pub struct ProxyGraph {
    hlt: Hlt,
    ids: FxHashMap<Cell, u32>,
    free: Vec<u32>,
    next: u32,
    refs: FxHashMap<(Cell, Cell), u8>,
}

fn pair(a: Cell, b: Cell) -> (Cell, Cell) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl ProxyGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn vertex_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.refs.len()
    }

    pub fn hlt(&self) -> &Hlt {
        &self.hlt
    }

    pub fn refcount(&self, a: Cell, b: Cell) -> u8 {
        self.refs.get(&pair(a, b)).copied().unwrap_or(0)
    }

    pub fn has_vertex(&self, c: &Cell) -> bool {
        self.ids.contains_key(c)
    }

    pub fn add_vertex(&mut self, c: Cell) -> Result<()> {
        if self.ids.contains_key(&c) {
            return Err(Error::DuplicateVertex(c));
        }
        let id = self.free.pop().unwrap_or_else(|| {
            self.next += 1;
            self.next - 1
        });
        self.hlt.add_vertex(id)?;
        self.ids.insert(c, id);
        Ok(())
    }

    pub fn remove_vertex(&mut self, c: Cell) -> Result<()> {
        let &id = self.ids.get(&c).ok_or(Error::UnknownVertex(c))?;
        if self.hlt.degree[id as usize] > 0 {
            return Err(Error::VertexNotIsolated(c));
        }
        self.hlt.remove_vertex(id)?;
        self.ids.remove(&c);
        self.free.push(id);
        Ok(())
    }

    fn id(&self, c: &Cell) -> Result<u32> {
        self.ids.get(c).copied().ok_or(Error::UnknownVertex(*c))
    }

    pub fn activate(&mut self, a: Cell, b: Cell) -> Result<()> {
        let (ia, ib) = (self.id(&a)?, self.id(&b)?);
        let k = pair(a, b);
        let r = self.refs.get(&k).copied().unwrap_or(0);
        if r >= 2 {
            return Err(Error::DuplicateEntry(format!("proxy edge {a}-{b}")));
        }
        if r == 0 {
            self.hlt.insert_edge(ia, ib)?;
        }
        self.refs.insert(k, r + 1);
        Ok(())
    }

    pub fn deactivate(&mut self, a: Cell, b: Cell) -> Result<()> {
        let (ia, ib) = (self.id(&a)?, self.id(&b)?);
        let k = pair(a, b);
        match self.refs.get(&k).copied() {
            None => Err(Error::InactiveEdge(a, b)),
            Some(1) => {
                self.refs.remove(&k);
                self.hlt.delete_edge(ia, ib)
            }
            Some(r) => {
                self.refs.insert(k, r - 1);
                Ok(())
            }
        }
    }

    pub fn connected(&self, a: Cell, b: Cell) -> Result<bool> {
        let (ia, ib) = (self.id(&a)?, self.id(&b)?);
        self.hlt.connected(ia, ib)
    }
}
