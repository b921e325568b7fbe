//! Compressed quadtree over the absolute dyadic grid.
//!
//! A cell is *explicit* when some square's neighborhood references it, when
//! it carries marks, or when it stores squares. The tree holds exactly the
//! explicit cells plus the lowest common ancestors needed to keep it
//! compressed: a non-explicit node always has at least two children.

use std::fmt::Write as _;

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::geometry::Cell;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct Node {
    parent: Option<Cell>,
    children: [Option<Cell>; 4],
    nbr_refs: u32,
    marks: u32,
    storing: bool,
}

impl Node {
    fn explicit(&self) -> bool {
        self.nbr_refs > 0 || self.marks > 0 || self.storing
    }

    fn child_count(&self) -> usize {
        self.children.iter().filter(|c| c.is_some()).count()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Quadtree {
    nodes: FxHashMap<Cell, Node>,
    root: Option<Cell>,
}

impl Quadtree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> Option<Cell> {
        self.root
    }

    pub fn contains(&self, cell: &Cell) -> bool {
        self.nodes.contains_key(cell)
    }

    pub fn parent(&self, cell: &Cell) -> Option<Cell> {
        self.nodes.get(cell).and_then(|n| n.parent)
    }

    pub fn children(&self, cell: &Cell) -> Vec<Cell> {
        self.nodes
            .get(cell)
            .map(|n| n.children.iter().flatten().copied().collect())
            .unwrap_or_default()
    }

    pub fn mark_count(&self, cell: &Cell) -> u32 {
        self.nodes.get(cell).map_or(0, |n| n.marks)
    }

    pub fn is_storing(&self, cell: &Cell) -> bool {
        self.nodes.get(cell).is_some_and(|n| n.storing)
    }

    /// Cells with a positive mark count, Morton-sorted.
    pub fn marked_cells(&self) -> Vec<(Cell, u32)> {
        let mut out: Vec<(Cell, u32)> = self
            .nodes
            .iter()
            .filter(|(_, n)| n.marks > 0)
            .map(|(c, n)| (*c, n.marks))
            .collect();
        out.sort();
        out
    }

    /// Reference every cell of a neighborhood block.
    pub fn ensure_cells(&mut self, cells: &[Cell]) {
        for c in cells {
            self.insert_node(*c);
            self.nodes.get_mut(c).unwrap().nbr_refs += 1;
        }
    }

    /// Drop one neighborhood reference per cell, collecting nodes that no
    /// longer have a reason to exist.
    pub fn release_cells(&mut self, cells: &[Cell]) -> Result<()> {
        for c in cells {
            let n = self.nodes.get(c).ok_or(Error::MissingCell(*c))?;
            if n.nbr_refs == 0 {
                return Err(Error::MissingCell(*c));
            }
        }
        for c in cells {
            self.nodes.get_mut(c).unwrap().nbr_refs -= 1;
            self.collect(*c);
        }
        Ok(())
    }

    /// Adjust the mark count of an existing cell by `delta`.
    pub fn mark(&mut self, cell: &Cell, delta: i32) -> Result<()> {
        let n = self.nodes.get_mut(cell).ok_or(Error::MissingCell(*cell))?;
        if delta < 0 && n.marks < delta.unsigned_abs() {
            return Err(Error::MarkUnderflow(*cell));
        }
        n.marks = n.marks.wrapping_add_signed(delta);
        self.collect(*cell);
        Ok(())
    }

    /// Overwrite the mark count, creating or collecting the node as needed.
    pub fn set_mark_count(&mut self, cell: &Cell, count: u32) {
        if count > 0 {
            self.insert_node(*cell);
        }
        if let Some(n) = self.nodes.get_mut(cell) {
            n.marks = count;
            self.collect(*cell);
        }
    }

    pub fn set_storing(&mut self, cell: &Cell, storing: bool) {
        if storing {
            self.insert_node(*cell);
        }
        if let Some(n) = self.nodes.get_mut(cell) {
            n.storing = storing;
            self.collect(*cell);
        }
    }

    /// Deepest existing node that is `cell` or one of its ancestors.
    pub fn deepest_ancestor_or_self(&self, cell: &Cell) -> Option<Cell> {
        if self.nodes.contains_key(cell) {
            return Some(*cell);
        }
        let mut cur = self.root?;
        if !cur.is_ancestor_or_self(cell) {
            return None;
        }
        loop {
            if cur == *cell || cur.level == 0 {
                return Some(cur);
            }
            let q = cur.quadrant_of(cell);
            match self.nodes[&cur].children[q] {
                Some(ch) if ch.is_ancestor_or_self(cell) => cur = ch,
                _ => return Some(cur),
            }
        }
    }

    /// Marked strict ancestor of `cell` closest to the root.
    pub fn highest_marked_ancestor(&self, cell: &Cell) -> Option<Cell> {
        let start = self.deepest_ancestor_or_self(cell)?;
        let mut cur = if start == *cell {
            self.nodes[&start].parent
        } else {
            Some(start)
        };
        let mut best = None;
        while let Some(c) = cur {
            let n = &self.nodes[&c];
            if n.marks > 0 {
                best = Some(c);
            }
            cur = n.parent;
        }
        best
    }

    /// Highest marked cell among `cell` itself and its ancestors.
    pub fn highest_marked_ancestor_or_self(&self, cell: &Cell) -> Option<Cell> {
        self.highest_marked_ancestor(cell)
            .or_else(|| (self.mark_count(cell) > 0).then_some(*cell))
    }

    fn insert_node(&mut self, cell: Cell) {
        if self.nodes.contains_key(&cell) {
            return;
        }
        let Some(root) = self.root else {
            self.nodes.insert(cell, Node::default());
            self.root = Some(cell);
            return;
        };
        if !root.is_ancestor_or_self(&cell) {
            let top = Cell::lca(&root, &cell);
            if top == cell {
                let mut n = Node::default();
                n.children[cell.quadrant_of(&root)] = Some(root);
                self.nodes.insert(cell, n);
            } else {
                let mut n = Node::default();
                n.children[top.quadrant_of(&root)] = Some(root);
                n.children[top.quadrant_of(&cell)] = Some(cell);
                self.nodes.insert(top, n);
                self.nodes.insert(
                    cell,
                    Node {
                        parent: Some(top),
                        ..Node::default()
                    },
                );
            }
            self.nodes.get_mut(&root).unwrap().parent = Some(top);
            self.root = Some(top);
            return;
        }
        let mut cur = root;
        loop {
            let q = cur.quadrant_of(&cell);
            let child = self.nodes[&cur].children[q];
            match child {
                None => {
                    self.nodes.get_mut(&cur).unwrap().children[q] = Some(cell);
                    self.nodes.insert(
                        cell,
                        Node {
                            parent: Some(cur),
                            ..Node::default()
                        },
                    );
                    return;
                }
                Some(ch) if ch.is_ancestor_or_self(&cell) => cur = ch,
                Some(ch) => {
                    let mid = Cell::lca(&ch, &cell);
                    let mut n = Node {
                        parent: Some(cur),
                        ..Node::default()
                    };
                    n.children[mid.quadrant_of(&ch)] = Some(ch);
                    if mid != cell {
                        n.children[mid.quadrant_of(&cell)] = Some(cell);
                        self.nodes.insert(
                            cell,
                            Node {
                                parent: Some(mid),
                                ..Node::default()
                            },
                        );
                    }
                    self.nodes.insert(mid, n);
                    self.nodes.get_mut(&ch).unwrap().parent = Some(mid);
                    self.nodes.get_mut(&cur).unwrap().children[q] = Some(mid);
                    return;
                }
            }
        }
    }

    /// Remove `cell` if nothing justifies it any more, splicing its single
    /// child upward, and continue with the parent.
    fn collect(&mut self, cell: Cell) {
        let Some(n) = self.nodes.get(&cell) else {
            return;
        };
        if n.explicit() || n.child_count() >= 2 {
            return;
        }
        let n = self.nodes.remove(&cell).unwrap();
        let child = n.children.iter().flatten().next().copied();
        if let Some(ch) = child {
            self.nodes.get_mut(&ch).unwrap().parent = n.parent;
        }
        match n.parent {
            None => self.root = child,
            Some(p) => {
                let q = p.quadrant_of(&cell);
                self.nodes.get_mut(&p).unwrap().children[q] = child;
                if child.is_none() {
                    self.collect(p);
                }
            }
        }
    }

    /// One line per node, `level ix iy mark_count is_storing`, Morton order.
    pub fn dump(&self) -> String {
        let mut cells: Vec<&Cell> = self.nodes.keys().collect();
        cells.sort();
        let mut out = String::new();
        for c in cells {
            let n = &self.nodes[c];
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                c.level,
                c.ix,
                c.iy,
                n.marks,
                u8::from(n.storing)
            );
        }
        out
    }

    /// Cells that currently have a reason to exist, Morton-sorted.
    pub fn explicit_cells(&self) -> Vec<Cell> {
        let mut out: Vec<Cell> = self
            .nodes
            .iter()
            .filter(|(_, n)| n.explicit())
            .map(|(c, _)| *c)
            .collect();
        out.sort();
        out
    }

    /// Verify links, compression and quadrant placement.
    pub fn check_structure(&self) -> std::result::Result<(), String> {
        let Some(root) = self.root else {
            return if self.nodes.is_empty() {
                Ok(())
            } else {
                Err("nodes without a root".into())
            };
        };
        if self.nodes[&root].parent.is_some() {
            return Err(format!("root {root} has a parent"));
        }
        let mut seen = 0;
        let mut stack = vec![root];
        while let Some(c) = stack.pop() {
            seen += 1;
            let n = self
                .nodes
                .get(&c)
                .ok_or_else(|| format!("dangling link to {c}"))?;
            if !n.explicit() && n.child_count() < 2 {
                return Err(format!("redundant node {c}"));
            }
            for (q, ch) in n.children.iter().enumerate() {
                let Some(ch) = ch else { continue };
                if ch.level >= c.level || !c.is_ancestor_or_self(ch) || c.quadrant_of(ch) != q {
                    return Err(format!("misplaced child {ch} under {c}"));
                }
                if self.nodes.get(ch).and_then(|x| x.parent) != Some(c) {
                    return Err(format!("parent link of {ch} is wrong"));
                }
                stack.push(*ch);
            }
        }
        if seen != self.nodes.len() {
            return Err(format!("{} unreachable nodes", self.nodes.len() - seen));
        }
        Ok(())
    }
}
