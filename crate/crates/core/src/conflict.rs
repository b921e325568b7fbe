//! Conflict-set structure over squares viewed as 5-coordinate points
//! `(s, l, r, b, t)` = (side, left, right, bottom, top).
//!
//! Every tree node keeps `m` (live points in its subtree) and a sparse map
//! `set -> m_set` counting how many of those points belong to each conflict
//! set. A subtree with `m > m_set` is guaranteed to hold a point outside the
//! set, so [`ConflictTree::find_excluding`] can walk straight to one without
//! scanning.
//!
//! The hierarchy is a dynamic kd-tree with per-node bounding boxes, kept
//! weight-balanced by scapegoat-style partial rebuilds. Deletions leave
//! tombstones until they outnumber live points, at which point the whole
//! tree is rebuilt.

use std::fmt::Debug;
use std::hash::Hash;

use rustc_hash::FxHashMap;
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::geometry::Rect;

pub type SetId = u64;
pub type Point5 = [i64; 5];

pub const DIM_S: usize = 0;
pub const DIM_L: usize = 1;
pub const DIM_R: usize = 2;
pub const DIM_B: usize = 3;
pub const DIM_T: usize = 4;

const NIL: u32 = u32::MAX;
/// A child may hold at most this fraction of its parent's subtree.
const ALPHA: f64 = 0.72;
const MIN_REBUILD: u32 = 8;

/// Closed orthogonal box in `(s, l, r, b, t)` space. Missing bounds are
/// `i64::MIN` / `i64::MAX`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Box5 {
    pub lo: Point5,
    pub hi: Point5,
}

impl Default for Box5 {
    fn default() -> Self {
        Self::all()
    }
}

impl Box5 {
    pub fn all() -> Self {
        Self {
            lo: [i64::MIN; 5],
            hi: [i64::MAX; 5],
        }
    }

    pub fn at_least(mut self, dim: usize, v: i64) -> Self {
        self.lo[dim] = self.lo[dim].max(v);
        self
    }

    pub fn at_most(mut self, dim: usize, v: i64) -> Self {
        self.hi[dim] = self.hi[dim].min(v);
        self
    }

    pub fn is_empty(&self) -> bool {
        (0..5).any(|d| self.lo[d] > self.hi[d])
    }

    pub fn contains_point(&self, p: &Point5) -> bool {
        (0..5).all(|d| self.lo[d] <= p[d] && p[d] <= self.hi[d])
    }

    pub fn intersect(&self, other: &Box5) -> Box5 {
        let mut out = *self;
        for d in 0..5 {
            out.lo[d] = out.lo[d].max(other.lo[d]);
            out.hi[d] = out.hi[d].min(other.hi[d]);
        }
        out
    }

    fn overlaps_range(&self, lo: &Point5, hi: &Point5) -> bool {
        (0..5).all(|d| self.lo[d] <= hi[d] && lo[d] <= self.hi[d])
    }

    fn covers_range(&self, lo: &Point5, hi: &Point5) -> bool {
        (0..5).all(|d| self.lo[d] <= lo[d] && hi[d] <= self.hi[d])
    }

    /// `self ∖ other` as at most ten pairwise disjoint boxes.
    pub fn minus(&self, other: &Box5) -> Vec<Box5> {
        if self.is_empty() {
            return Vec::new();
        }
        if !other.overlaps_range(&self.lo, &self.hi) || other.is_empty() {
            return vec![*self];
        }
        let mut rest = *self;
        let mut out = Vec::new();
        for d in 0..5 {
            if rest.lo[d] < other.lo[d] {
                let mut piece = rest;
                piece.hi[d] = other.lo[d] - 1;
                out.push(piece);
                rest.lo[d] = other.lo[d];
            }
            if rest.hi[d] > other.hi[d] {
                let mut piece = rest;
                piece.lo[d] = other.hi[d] + 1;
                out.push(piece);
                rest.hi[d] = other.hi[d];
            }
        }
        out
    }
}

/// Squares whose closed region meets `q`.
pub fn boxes_intersecting(q: &Rect) -> Vec<Box5> {
    vec![Box5::all()
        .at_most(DIM_L, q.x_hi)
        .at_least(DIM_R, q.x_lo)
        .at_most(DIM_B, q.y_hi)
        .at_least(DIM_T, q.y_lo)]
}

/// Squares that contain `q`.
pub fn boxes_containing(q: &Rect) -> Vec<Box5> {
    vec![Box5::all()
        .at_most(DIM_L, q.x_lo)
        .at_least(DIM_R, q.x_hi)
        .at_most(DIM_B, q.y_lo)
        .at_least(DIM_T, q.y_hi)]
}

/// Squares whose open interior contains `q`.
pub fn boxes_containing_in_interior(q: &Rect) -> Vec<Box5> {
    vec![Box5::all()
        .at_most(DIM_L, q.x_lo - 1)
        .at_least(DIM_R, q.x_hi + 1)
        .at_most(DIM_B, q.y_lo - 1)
        .at_least(DIM_T, q.y_hi + 1)]
}

/// Entries whose extent lies inside `q`.
pub fn boxes_contained_in(q: &Rect) -> Vec<Box5> {
    vec![Box5::all()
        .at_least(DIM_L, q.x_lo)
        .at_most(DIM_R, q.x_hi)
        .at_least(DIM_B, q.y_lo)
        .at_most(DIM_T, q.y_hi)]
}

/// Entries lying in the open interior of `q`.
pub fn boxes_contained_in_interior(q: &Rect) -> Vec<Box5> {
    vec![Box5::all()
        .at_least(DIM_L, q.x_lo + 1)
        .at_most(DIM_R, q.x_hi - 1)
        .at_least(DIM_B, q.y_lo + 1)
        .at_most(DIM_T, q.y_hi - 1)]
}

/// Entries whose extent meets `∂q`.
pub fn boxes_meeting_boundary_of(q: &Rect) -> Vec<Box5> {
    boxes_minus(&boxes_intersecting(q), &boxes_contained_in_interior(q))
}

/// Set difference of two box unions, as disjoint boxes (given disjoint `a`).
pub fn boxes_minus(a: &[Box5], b: &[Box5]) -> Vec<Box5> {
    let mut current: Vec<Box5> = a.iter().copied().filter(|x| !x.is_empty()).collect();
    for sub in b {
        current = current.iter().flat_map(|x| x.minus(sub)).collect();
    }
    current
}

/// Pairwise intersection of two box unions.
pub fn boxes_and(a: &[Box5], b: &[Box5]) -> Vec<Box5> {
    let mut out = Vec::new();
    for x in a {
        for y in b {
            let z = x.intersect(y);
            if !z.is_empty() {
                out.push(z);
            }
        }
    }
    out
}

/// Squares `γ` with `k ∩ ∂γ ≠ ∅`.
pub fn boxes_boundary_intersecting(k: &Rect) -> Vec<Box5> {
    boxes_minus(&boxes_intersecting(k), &boxes_containing_in_interior(k))
}

pub fn boxes_min_side(s_min: i64) -> Vec<Box5> {
    vec![Box5::all().at_least(DIM_S, s_min)]
}

pub fn boxes_max_side(s_max: i64) -> Vec<Box5> {
    vec![Box5::all().at_most(DIM_S, s_max)]
}

#[derive(Clone, Debug)]
struct Node<K> {
    key: K,
    point: Point5,
    alive: bool,
    parent: u32,
    left: u32,
    right: u32,
    dim: u8,
    /// Nodes in the subtree, tombstones included.
    size: u32,
    /// Live points in the subtree.
    live: u32,
    lo: Point5,
    hi: Point5,
    conflicts: FxHashMap<SetId, u32>,
}

/// Dynamic point set with per-subtree conflict-set counts.
#[derive(Clone, Debug)]
pub struct ConflictTree<K> {
    nodes: Vec<Node<K>>,
    free: Vec<u32>,
    root: u32,
    index: FxHashMap<K, u32>,
    memberships: FxHashMap<K, SmallVec<[SetId; 4]>>,
    dead: u32,
    rebuilds: u64,
}

impl<K> Default for ConflictTree<K>
where
    K: Copy + Eq + Hash + Ord + Debug,
{
    fn default() -> Self {
        Self::new()
    }
}

impl<K> ConflictTree<K>
where
    K: Copy + Eq + Hash + Ord + Debug,
{
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            free: Vec::new(),
            root: NIL,
            index: FxHashMap::default(),
            memberships: FxHashMap::default(),
            dead: 0,
            rebuilds: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains_key(&self, key: &K) -> bool {
        self.index.contains_key(key)
    }

    pub fn point(&self, key: &K) -> Option<Point5> {
        self.index.get(key).map(|&i| self.nodes[i as usize].point)
    }

    /// Conflict sets `key` currently belongs to.
    pub fn memberships(&self, key: &K) -> &[SetId] {
        self.memberships.get(key).map_or(&[], |v| v.as_slice())
    }

    pub fn is_member(&self, key: &K, set: SetId) -> bool {
        self.memberships(key).contains(&set)
    }

    /// `|R_set|`, read off the root counts.
    pub fn set_size(&self, set: SetId) -> u32 {
        if self.root == NIL {
            return 0;
        }
        self.nodes[self.root as usize]
            .conflicts
            .get(&set)
            .copied()
            .unwrap_or(0)
    }

    /// Members of `set` by full scan, sorted.
    pub fn set_members(&self, set: SetId) -> Vec<K> {
        let mut out: Vec<K> = self
            .memberships
            .iter()
            .filter(|(_, sets)| sets.contains(&set))
            .map(|(k, _)| *k)
            .collect();
        out.sort();
        out
    }

    /// Live entries sorted by key.
    pub fn entries(&self) -> Vec<(K, Point5)> {
        let mut out: Vec<(K, Point5)> = self
            .index
            .iter()
            .map(|(k, &i)| (*k, self.nodes[i as usize].point))
            .collect();
        out.sort_by_key(|e| e.0);
        out
    }

    /// Stored counters: one `m` per node plus every explicit `m_set` entry.
    pub fn count_entries(&self) -> usize {
        let mut total = 0;
        self.walk(self.root, &mut |n| total += 1 + n.conflicts.len());
        total
    }

    pub fn rebuilds(&self) -> u64 {
        self.rebuilds
    }

    fn walk(&self, n: u32, f: &mut impl FnMut(&Node<K>)) {
        if n == NIL {
            return;
        }
        let node = &self.nodes[n as usize];
        f(node);
        self.walk(node.left, f);
        self.walk(node.right, f);
    }

    fn alloc(&mut self, node: Node<K>) -> u32 {
        if let Some(i) = self.free.pop() {
            self.nodes[i as usize] = node;
            i
        } else {
            self.nodes.push(node);
            (self.nodes.len() - 1) as u32
        }
    }

    pub fn insert(&mut self, key: K, point: Point5) -> Result<()> {
        if self.index.contains_key(&key) {
            return Err(Error::DuplicateEntry(format!("{key:?}")));
        }
        let mut node = Node {
            key,
            point,
            alive: true,
            parent: NIL,
            left: NIL,
            right: NIL,
            dim: 0,
            size: 1,
            live: 1,
            lo: point,
            hi: point,
            conflicts: FxHashMap::default(),
        };
        if self.root == NIL {
            let idx = self.alloc(node);
            self.root = idx;
            self.index.insert(key, idx);
            return Ok(());
        }
        let mut path = Vec::new();
        let mut cur = self.root;
        loop {
            path.push(cur);
            let n = &mut self.nodes[cur as usize];
            n.size += 1;
            n.live += 1;
            for (d, v) in point.iter().enumerate() {
                n.lo[d] = n.lo[d].min(*v);
                n.hi[d] = n.hi[d].max(*v);
            }
            let d = n.dim as usize;
            let next = if point[d] < n.point[d] { n.left } else { n.right };
            if next == NIL {
                node.parent = cur;
                node.dim = ((d + 1) % 5) as u8;
                let go_left = point[d] < n.point[d];
                let idx = self.alloc(node);
                if go_left {
                    self.nodes[cur as usize].left = idx;
                } else {
                    self.nodes[cur as usize].right = idx;
                }
                self.index.insert(key, idx);
                break;
            }
            cur = next;
        }
        // Rebuild at the highest ancestor that lost weight balance.
        let scapegoat = path.iter().copied().find(|&p| {
            let n = &self.nodes[p as usize];
            if n.size < MIN_REBUILD {
                return false;
            }
            let heavy = self.size_of(n.left).max(self.size_of(n.right));
            heavy as f64 > ALPHA * n.size as f64
        });
        if let Some(s) = scapegoat {
            self.rebuild(s);
        }
        Ok(())
    }

    pub fn delete(&mut self, key: &K) -> Result<()> {
        let idx = self
            .index
            .remove(key)
            .ok_or_else(|| Error::MissingEntry(format!("{key:?}")))?;
        if let Some(sets) = self.memberships.remove(key) {
            for set in sets {
                self.adjust_path(idx, set, false);
            }
        }
        self.nodes[idx as usize].alive = false;
        let mut cur = idx;
        while cur != NIL {
            let n = &mut self.nodes[cur as usize];
            n.live -= 1;
            cur = n.parent;
        }
        self.dead += 1;
        if self.index.is_empty() {
            self.nodes.clear();
            self.free.clear();
            self.root = NIL;
            self.dead = 0;
        } else if self.dead > self.index.len() as u32 && self.dead >= MIN_REBUILD {
            self.rebuild(self.root);
        }
        Ok(())
    }

    /// Add `key` to conflict set `set`.
    pub fn join(&mut self, key: &K, set: SetId) -> Result<()> {
        let &idx = self
            .index
            .get(key)
            .ok_or_else(|| Error::MissingEntry(format!("{key:?}")))?;
        let sets = self.memberships.entry(*key).or_default();
        if sets.contains(&set) {
            return Err(Error::AlreadyMember {
                key: format!("{key:?}"),
                set,
            });
        }
        sets.push(set);
        self.adjust_path(idx, set, true);
        Ok(())
    }

    /// Remove `key` from conflict set `set`.
    pub fn leave(&mut self, key: &K, set: SetId) -> Result<()> {
        let &idx = self
            .index
            .get(key)
            .ok_or_else(|| Error::MissingEntry(format!("{key:?}")))?;
        let not_member = || Error::NotMember {
            key: format!("{key:?}"),
            set,
        };
        let sets = self.memberships.get_mut(key).ok_or_else(not_member)?;
        let pos = sets.iter().position(|&s| s == set).ok_or_else(not_member)?;
        sets.swap_remove(pos);
        if sets.is_empty() {
            self.memberships.remove(key);
        }
        self.adjust_path(idx, set, false);
        Ok(())
    }

    fn adjust_path(&mut self, idx: u32, set: SetId, up: bool) {
        let mut cur = idx;
        while cur != NIL {
            let n = &mut self.nodes[cur as usize];
            if up {
                *n.conflicts.entry(set).or_insert(0) += 1;
            } else {
                let c = n.conflicts.get_mut(&set).expect("conflict count underflow");
                *c -= 1;
                if *c == 0 {
                    n.conflicts.remove(&set);
                }
            }
            cur = n.parent;
        }
    }

    fn size_of(&self, n: u32) -> u32 {
        if n == NIL {
            0
        } else {
            self.nodes[n as usize].size
        }
    }

    fn excluded(&self, n: u32, set: Option<SetId>) -> u32 {
        match set {
            None => 0,
            Some(s) => self.nodes[n as usize].conflicts.get(&s).copied().unwrap_or(0),
        }
    }

    fn collect_live(&self, n: u32, out: &mut Vec<(K, Point5)>, freed: &mut Vec<u32>) {
        if n == NIL {
            return;
        }
        let node = &self.nodes[n as usize];
        if node.alive {
            out.push((node.key, node.point));
        }
        freed.push(n);
        self.collect_live(node.left, out, freed);
        self.collect_live(node.right, out, freed);
    }

    fn rebuild(&mut self, at: u32) {
        self.rebuilds += 1;
        let parent = self.nodes[at as usize].parent;
        let was_left = parent != NIL && self.nodes[parent as usize].left == at;
        let mut items = Vec::new();
        let mut freed = Vec::new();
        self.collect_live(at, &mut items, &mut freed);
        let dead_here = (freed.len() - items.len()) as u32;
        self.dead -= dead_here;
        self.free.extend(freed);
        let new_root = self.build(&mut items, parent);
        if parent == NIL {
            self.root = new_root;
        } else if was_left {
            self.nodes[parent as usize].left = new_root;
        } else {
            self.nodes[parent as usize].right = new_root;
        }
        // Tombstones removed from this subtree no longer count towards the
        // ancestors' sizes.
        let mut cur = parent;
        while cur != NIL {
            let n = &mut self.nodes[cur as usize];
            n.size -= dead_here;
            cur = n.parent;
        }
    }

    fn build(&mut self, items: &mut [(K, Point5)], parent: u32) -> u32 {
        if items.is_empty() {
            return NIL;
        }
        let mut lo = [i64::MAX; 5];
        let mut hi = [i64::MIN; 5];
        for (_, p) in items.iter() {
            for d in 0..5 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let dim = (0..5)
            .max_by_key(|&d| (hi[d] as i128 - lo[d] as i128, std::cmp::Reverse(d)))
            .unwrap();
        let mid = items.len() / 2;
        items.select_nth_unstable_by(mid, |a, b| a.1[dim].cmp(&b.1[dim]).then(a.0.cmp(&b.0)));
        let (key, point) = items[mid];
        let idx = self.alloc(Node {
            key,
            point,
            alive: true,
            parent,
            left: NIL,
            right: NIL,
            dim: dim as u8,
            size: items.len() as u32,
            live: items.len() as u32,
            lo,
            hi,
            conflicts: FxHashMap::default(),
        });
        self.index.insert(key, idx);
        let (left_items, rest) = items.split_at_mut(mid);
        let left = self.build(left_items, idx);
        let right = self.build(&mut rest[1..], idx);
        let mut conflicts = FxHashMap::default();
        for child in [left, right] {
            if child != NIL {
                for (&s, &c) in &self.nodes[child as usize].conflicts {
                    *conflicts.entry(s).or_insert(0) += c;
                }
            }
        }
        if let Some(sets) = self.memberships.get(&key) {
            for &s in sets {
                *conflicts.entry(s).or_insert(0) += 1;
            }
        }
        let n = &mut self.nodes[idx as usize];
        n.left = left;
        n.right = right;
        n.conflicts = conflicts;
        idx
    }

    /// Some stored entry inside the union of `boxes` that is not in `set`
    /// (any entry when `set` is `None`). Boxes are scanned in order and the
    /// descent prefers left children, so the answer is deterministic.
    pub fn find_excluding(&self, boxes: &[Box5], set: Option<SetId>) -> Option<(K, Point5)> {
        if self.root == NIL {
            return None;
        }
        boxes
            .iter()
            .filter(|b| !b.is_empty())
            .find_map(|b| self.find_in(self.root, b, set))
            .map(|i| {
                let n = &self.nodes[i as usize];
                (n.key, n.point)
            })
    }

    fn find_in(&self, n: u32, b: &Box5, set: Option<SetId>) -> Option<u32> {
        if n == NIL {
            return None;
        }
        let node = &self.nodes[n as usize];
        if node.live == 0 || self.excluded(n, set) >= node.live {
            return None;
        }
        if !b.overlaps_range(&node.lo, &node.hi) {
            return None;
        }
        if b.covers_range(&node.lo, &node.hi) {
            return Some(self.descend(n, set));
        }
        if let Some(hit) = self.find_in(node.left, b, set) {
            return Some(hit);
        }
        if node.alive && b.contains_point(&node.point) && !self.in_set(&node.key, set) {
            return Some(n);
        }
        self.find_in(node.right, b, set)
    }

    /// Walk to a live point outside `set`; the caller guarantees `m > m_set`.
    fn descend(&self, mut n: u32, set: Option<SetId>) -> u32 {
        loop {
            let node = &self.nodes[n as usize];
            let l = node.left;
            if l != NIL && self.nodes[l as usize].live > self.excluded(l, set) {
                n = l;
                continue;
            }
            if node.alive && !self.in_set(&node.key, set) {
                return n;
            }
            debug_assert!(node.right != NIL, "count invariant broken");
            n = node.right;
        }
    }

    fn in_set(&self, key: &K, set: Option<SetId>) -> bool {
        set.is_some_and(|s| self.is_member(key, s))
    }

    /// Number of stored entries in the union of (disjoint) `boxes`.
    pub fn count(&self, boxes: &[Box5]) -> usize {
        boxes
            .iter()
            .filter(|b| !b.is_empty())
            .map(|b| self.count_in(self.root, b))
            .sum()
    }

    fn count_in(&self, n: u32, b: &Box5) -> usize {
        if n == NIL {
            return 0;
        }
        let node = &self.nodes[n as usize];
        if node.live == 0 || !b.overlaps_range(&node.lo, &node.hi) {
            return 0;
        }
        if b.covers_range(&node.lo, &node.hi) {
            return node.live as usize;
        }
        let own = usize::from(node.alive && b.contains_point(&node.point));
        own + self.count_in(node.left, b) + self.count_in(node.right, b)
    }

    /// Every stored entry in the union of `boxes`, sorted by key.
    pub fn report_all(&self, boxes: &[Box5]) -> Vec<(K, Point5)> {
        let mut out = Vec::new();
        for b in boxes.iter().filter(|b| !b.is_empty()) {
            self.report_in(self.root, b, &mut out);
        }
        out.sort_by_key(|e| e.0);
        out.dedup_by(|a, b| a.0 == b.0);
        out
    }

    fn report_in(&self, n: u32, b: &Box5, out: &mut Vec<(K, Point5)>) {
        if n == NIL {
            return;
        }
        let node = &self.nodes[n as usize];
        if node.live == 0 || !b.overlaps_range(&node.lo, &node.hi) {
            return;
        }
        if node.alive && b.contains_point(&node.point) {
            out.push((node.key, node.point));
        }
        self.report_in(node.left, b, out);
        self.report_in(node.right, b, out);
    }

    /// Recount every `m` and `m_set` from the leaves and compare with the
    /// stored values; also checks bounding boxes and sizes.
    pub fn check_counts(&self) -> std::result::Result<(), String> {
        if self.root == NIL {
            return if self.index.is_empty() {
                Ok(())
            } else {
                Err("empty tree with indexed keys".into())
            };
        }
        self.check_node(self.root).map(|_| ())?;
        for (k, &i) in &self.index {
            let n = &self.nodes[i as usize];
            if !n.alive || n.key != *k {
                return Err(format!("index entry {k:?} points at a stale node"));
            }
        }
        Ok(())
    }

    #[allow(clippy::type_complexity)]
    fn check_node(
        &self,
        n: u32,
    ) -> std::result::Result<(u32, u32, FxHashMap<SetId, u32>), String> {
        let node = &self.nodes[n as usize];
        let mut size = 1;
        let mut live = u32::from(node.alive);
        let mut counts: FxHashMap<SetId, u32> = FxHashMap::default();
        if node.alive {
            for &s in self.memberships(&node.key) {
                *counts.entry(s).or_insert(0) += 1;
            }
        }
        for child in [node.left, node.right] {
            if child == NIL {
                continue;
            }
            let c = &self.nodes[child as usize];
            if c.parent != n {
                return Err(format!("broken parent link under {:?}", node.key));
            }
            for d in 0..5 {
                if c.lo[d] < node.lo[d] || c.hi[d] > node.hi[d] {
                    return Err(format!("child bbox escapes parent at {:?}", node.key));
                }
            }
            let (s, l, m) = self.check_node(child)?;
            size += s;
            live += l;
            for (k, v) in m {
                *counts.entry(k).or_insert(0) += v;
            }
        }
        if !(0..5).all(|d| node.lo[d] <= node.point[d] && node.point[d] <= node.hi[d]) {
            return Err(format!("point outside bbox at {:?}", node.key));
        }
        if size != node.size || live != node.live {
            return Err(format!(
                "size/live mismatch at {:?}: stored {}/{} recount {}/{}",
                node.key, node.size, node.live, size, live
            ));
        }
        if counts != node.conflicts {
            return Err(format!("conflict counts mismatch at {:?}", node.key));
        }
        Ok((size, live, counts))
    }
}
