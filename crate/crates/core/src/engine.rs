//! The update pipeline and connectivity queries.
//!
//! Insert: neighborhood cells, storing cell, containment marks, perimeter
//! and inverse perimeter, matchings, proxy edges. Delete runs the same steps
//! in reverse, detaching matched edges before the square leaves its cell and
//! rematching the partners afterwards.

use std::collections::{BTreeMap, BTreeSet};

use rustc_hash::FxHashMap;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{neighborhood, Cell, Region, Square, SquareId, MAX_LEVEL};
use crate::hlt::ProxyGraph;
use crate::matching::{Matching, PairKey};
use crate::oracle::Oracle;
use crate::quadtree::Quadtree;
use crate::registry::Registry;

/// Snapshot of sizes and per-update work.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Stats {
    pub n: usize,
    pub psi: f64,
    pub quadtree_nodes: usize,
    pub storing_cells: usize,
    pub conflict_entries: usize,
    pub matched_edges: usize,
    pub matching_pairs: usize,
    pub proxy_vertices: usize,
    pub proxy_edges: usize,
    pub rematches: u64,
    pub replacement_touches: u64,
    /// |𝒞(σ)| of the last update.
    pub last_contained: usize,
    /// |𝒫(σ)| of the last update.
    pub last_perimeter: usize,
    /// ψ over the states before and after the last update.
    pub last_psi: f64,
}

/// Work done by the most recent update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateWork {
    pub contained: usize,
    pub perimeter: usize,
    pub psi: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Engine {
    squares: FxHashMap<SquareId, Square>,
    sides: BTreeMap<i64, u32>,
    quadtree: Quadtree,
    registry: Registry,
    matching: Matching,
    proxy: ProxyGraph,
    last_contained: usize,
    last_perimeter: usize,
    last_psi: f64,
}

impl Engine {
    pub fn new() -> Self {
        Self {
            last_psi: 1.0,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.squares.len()
    }

    pub fn is_empty(&self) -> bool {
        self.squares.is_empty()
    }

    pub fn get(&self, id: SquareId) -> Option<&Square> {
        self.squares.get(&id)
    }

    pub fn quadtree(&self) -> &Quadtree {
        &self.quadtree
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn matching(&self) -> &Matching {
        &self.matching
    }

    pub fn proxy(&self) -> &ProxyGraph {
        &self.proxy
    }

    /// Largest over smallest side; 1 when empty.
    pub fn psi(&self) -> f64 {
        match (self.sides.keys().next(), self.sides.keys().next_back()) {
            (Some(lo), Some(hi)) => *hi as f64 / *lo as f64,
            _ => 1.0,
        }
    }

    pub fn insert_input(&mut self, id: u64, x: i64, y: i64, side: i64) -> Result<()> {
        self.insert(Square::from_input(id, x, y, side)?)
    }

    pub fn insert(&mut self, sq: Square) -> Result<()> {
        if self.squares.contains_key(&sq.id) {
            return Err(Error::DuplicateSquare(sq.id));
        }
        let psi_before = self.psi();
        self.squares.insert(sq.id, sq);
        *self.sides.entry(sq.side).or_insert(0) += 1;

        self.quadtree.ensure_cells(&neighborhood(&sq));
        let c = sq.storing_cell();
        let fresh = self.registry.insert_square(&sq)?;
        self.quadtree.set_storing(&c, true);
        if fresh {
            self.proxy.add_vertex(c)?;
        }

        let contained = self.registry.report_contained_cells(&sq.rect());
        for cell in &contained {
            if !(fresh && cell.is_ancestor_or_self(&c)) {
                self.add_marks(cell, 1);
            }
        }
        if fresh {
            self.recompute_ancestors(&c);
        }

        let perimeter = self.registry.perimeter(&sq);
        let inverse = self.registry.inverse_perimeter(&c);
        self.matching
            .on_square_inserted(&mut self.registry, &sq, &perimeter, &inverse)?;
        self.apply_transitions()?;

        self.last_contained = contained.len();
        self.last_perimeter = perimeter.len();
        self.last_psi = psi_before.max(self.psi());
        Ok(())
    }

    pub fn delete(&mut self, id: SquareId) -> Result<()> {
        let sq = *self.squares.get(&id).ok_or(Error::UnknownSquare(id))?;
        let psi_before = self.psi();
        let c = sq.storing_cell();
        let contained = self.registry.report_contained_cells(&sq.rect());
        let perimeter_len = self.registry.perimeter(&sq).len();

        let orphans = self.matching.detach(&mut self.registry, id)?;
        let emptied = self.registry.remove_square(&sq)?;
        self.matching.rematch(&mut self.registry, &orphans)?;
        self.apply_transitions()?;

        for cell in &contained {
            if !(emptied && cell.is_ancestor_or_self(&c)) {
                self.add_marks(cell, -1);
            }
        }
        if emptied {
            self.quadtree.set_storing(&c, false);
            self.recompute_ancestors(&c);
            self.proxy.remove_vertex(c)?;
        }
        self.quadtree.release_cells(&neighborhood(&sq))?;

        self.squares.remove(&id);
        let n = self.sides.get_mut(&sq.side).unwrap();
        *n -= 1;
        if *n == 0 {
            self.sides.remove(&sq.side);
        }
        self.last_contained = contained.len();
        self.last_perimeter = perimeter_len;
        self.last_psi = psi_before.max(self.psi());
        Ok(())
    }

    fn add_marks(&mut self, cell: &Cell, delta: i32) {
        let m = self.quadtree.mark_count(cell);
        self.quadtree.set_mark_count(cell, m.saturating_add_signed(delta));
    }

    /// Reset the counters on the ancestor path of `c` from the current squares.
    fn recompute_ancestors(&mut self, c: &Cell) {
        let live_top = self.registry.max_level().map_or(0, |l| l + 1);
        let stale_top = self
            .quadtree
            .highest_marked_ancestor_or_self(c)
            .map_or(0, |a| a.level);
        let top = live_top.max(stale_top).clamp(c.level, MAX_LEVEL);
        for level in c.level..=top {
            let a = c.ancestor(level);
            let want = self.registry.counter(&a);
            if want != self.quadtree.mark_count(&a) {
                self.quadtree.set_mark_count(&a, want);
            }
        }
    }

    fn apply_transitions(&mut self) -> Result<()> {
        let transitions = self.matching.take_transitions();
        for ((a, b), on) in &transitions {
            if *on {
                self.proxy.activate(*a, *b)?;
            }
        }
        for ((a, b), on) in &transitions {
            if !*on {
                self.proxy.deactivate(*a, *b)?;
            }
        }
        Ok(())
    }

    /// The proxy vertex standing in for a square in connectivity queries.
    pub fn proxy_vertex(&self, id: SquareId) -> Result<Cell> {
        let sq = self.squares.get(&id).ok_or(Error::UnknownSquare(id))?;
        let c = sq.storing_cell();
        match self.quadtree.highest_marked_ancestor_or_self(&c) {
            None => Ok(c),
            Some(a) => Ok(self.registry.find_marking_square(&a)?.storing_cell()),
        }
    }

    pub fn connected(&self, a: SquareId, b: SquareId) -> Result<bool> {
        let va = self.proxy_vertex(a)?;
        let vb = self.proxy_vertex(b)?;
        self.proxy.connected(va, vb)
    }

    pub fn last_update(&self) -> UpdateWork {
        UpdateWork {
            contained: self.last_contained,
            perimeter: self.last_perimeter,
            psi: self.last_psi,
        }
    }

    /// Full snapshot. Counting conflict entries visits every storing cell.
    pub fn stats(&self) -> Stats {
        Stats {
            n: self.squares.len(),
            psi: self.psi(),
            quadtree_nodes: self.quadtree.len(),
            storing_cells: self.registry.storing_count(),
            conflict_entries: self.registry.conflict_entries(),
            matched_edges: self.matching.edge_count(),
            matching_pairs: self.matching.pair_count(),
            proxy_vertices: self.proxy.vertex_count(),
            proxy_edges: self.proxy.edge_count(),
            rematches: self.matching.rematches(),
            replacement_touches: self.proxy.hlt().touches(),
            last_contained: self.last_contained,
            last_perimeter: self.last_perimeter,
            last_psi: self.last_psi,
        }
    }

    /// Deterministic text rendering of the structural state.
    pub fn dump(&self) -> String {
        let mut out = self.quadtree.dump();
        for p in self.matching.snapshot().pairs {
            out.push_str(&format!("pair {} {} {:?}\n", p.c1, p.c2, p.edges));
        }
        out
    }

    /// Internal consistency of every component.
    pub fn check(&self) -> std::result::Result<(), String> {
        self.quadtree.check_structure()?;
        self.registry.check()?;
        self.matching.check_sets(&self.registry)?;
        self.proxy.hlt().check_invariants()?;
        for k in self.matching.snapshot().pairs.iter().map(|p| (p.c1, p.c2)) {
            let k: PairKey = k;
            if self.proxy.refcount(k.0, k.1) == 0 {
                return Err(format!("active pair {} -> {} has no proxy edge", k.0, k.1));
            }
        }
        Ok(())
    }

    /// Compare every structural set against brute force over `oracle`,
    /// which must hold the same squares.
    pub fn check_deep(&self, oracle: &Oracle) -> std::result::Result<(), String> {
        self.check()?;
        if oracle.len() != self.len() {
            return Err("oracle and engine disagree on n".into());
        }
        oracle.o_check_matchings(&self.matching.snapshot())?;

        let sets = oracle.o_structural_sets();
        let counters = &sets.counters;
        let marked: BTreeMap<Cell, u32> = self.quadtree.marked_cells().into_iter().collect();
        if &marked != counters {
            let diff: Vec<_> = counters
                .iter()
                .filter(|(c, n)| marked.get(c) != Some(n))
                .chain(marked.iter().filter(|(c, n)| counters.get(c) != Some(n)))
                .take(4)
                .collect();
            return Err(format!("mark counts differ, e.g. {diff:?}"));
        }

        let storing: Vec<Cell> = sets.inverse.keys().copied().collect();
        if self.registry.storing_cells() != storing {
            return Err("storing cells differ".into());
        }
        let mut explicit: BTreeSet<Cell> = storing.iter().copied().collect();
        explicit.extend(counters.keys().copied());
        for s in oracle.squares() {
            explicit.extend(neighborhood(s));
        }
        if self.quadtree.explicit_cells() != explicit.iter().copied().collect::<Vec<_>>() {
            return Err("explicit quadtree cells differ".into());
        }
        let sorted: Vec<Cell> = explicit.iter().copied().collect();
        let mut closure = explicit.clone();
        for w in sorted.windows(2) {
            closure.insert(Cell::lca(&w[0], &w[1]));
        }
        if self.quadtree.len() != closure.len() || closure.iter().any(|c| !self.quadtree.contains(c)) {
            return Err("quadtree nodes are not the closure of explicit cells".into());
        }

        for s in oracle.squares() {
            if self.registry.perimeter(s) != sets.perimeter[&s.id] {
                return Err(format!("perimeter of {} differs", s.id));
            }
            if self.registry.report_contained_cells(&s.rect()) != sets.contained[&s.id] {
                return Err(format!("containment set of {} differs", s.id));
            }
        }
        for (c, z) in &sets.inverse {
            if &self.registry.inverse_perimeter(c) != z {
                return Err(format!("inverse perimeter of {c} differs"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn id(i: u64) -> SquareId {
        SquareId(i)
    }

    #[test]
    fn worked_pair_connects() {
        let mut e = Engine::new();
        e.insert_input(1, 0, 0, 4).unwrap();
        e.insert_input(2, 3, 3, 4).unwrap();
        assert!(e.connected(id(1), id(2)).unwrap());
        e.check().unwrap();
    }

    #[test]
    fn single_square() {
        let mut e = Engine::new();
        assert_eq!(e.stats().psi, 1.0);
        assert_eq!(e.stats().n, 0);
        e.insert_input(1, 10, 10, 3).unwrap();
        let s = e.stats();
        assert_eq!((s.n, s.psi, s.proxy_vertices, s.proxy_edges), (1, 1.0, 1, 0));
        assert!(e.connected(id(1), id(1)).unwrap());
        let mut o = Oracle::new();
        o.insert(*e.get(id(1)).unwrap()).unwrap();
        e.check_deep(&o).unwrap();
        // 25 neighborhood cells plus the branching nodes joining them.
        assert!(s.quadtree_nodes > 25);
    }

    #[test]
    fn tiny_inside_huge_connects_through_marks() {
        let mut e = Engine::new();
        e.insert_input(1, 0, 0, 1024).unwrap();
        e.insert_input(2, 500, 500, 1).unwrap();
        assert_eq!(e.matching().pair_count(), 0);
        assert!(e.connected(id(1), id(2)).unwrap());
    }

    #[test]
    fn chain_breaks() {
        let mut e = Engine::new();
        e.insert_input(1, 0, 0, 2).unwrap();
        e.insert_input(2, 1, 1, 2).unwrap();
        e.insert_input(3, 3, 3, 2).unwrap();
        assert!(e.connected(id(1), id(3)).unwrap());
        e.delete(id(2)).unwrap();
        assert!(!e.connected(id(1), id(3)).unwrap());
        assert!(e.connected(id(2), id(1)).is_err());
    }

    #[test]
    fn failed_updates_leave_state_untouched() {
        let mut e = Engine::new();
        e.insert_input(1, 0, 0, 4).unwrap();
        e.insert_input(2, 3, 3, 4).unwrap();
        let before = (e.dump(), e.stats());
        assert_eq!(e.insert_input(1, 9, 9, 1), Err(Error::DuplicateSquare(id(1))));
        assert!(e.insert_input(3, -1, 0, 1).is_err());
        assert_eq!(e.delete(id(9)), Err(Error::UnknownSquare(id(9))));
        assert_eq!((e.dump(), e.stats()), before);
    }

    #[test]
    fn delete_then_reinsert_restores_state() {
        let mut e = Engine::new();
        for (i, (x, y, s)) in [(0, 0, 4), (3, 3, 4), (10, 2, 1), (2, 9, 8)].iter().enumerate() {
            e.insert_input(i as u64, *x, *y, *s).unwrap();
        }
        let nodes = e.stats().quadtree_nodes;
        let marks = e.quadtree().marked_cells();
        e.delete(id(3)).unwrap();
        e.insert_input(3, 2, 9, 8).unwrap();
        assert_eq!(e.stats().quadtree_nodes, nodes);
        assert_eq!(e.quadtree().marked_cells(), marks);
        e.check().unwrap();
    }

    #[test]
    fn empties_out_completely() {
        let mut e = Engine::new();
        for i in 0..30u64 {
            e.insert_input(i, (i * 37 % 50) as i64, (i * 11 % 40) as i64, 1 << (i % 5))
                .unwrap();
        }
        for i in 0..30u64 {
            e.delete(id(i)).unwrap();
            e.check().unwrap();
        }
        let s = e.stats();
        assert_eq!(
            (s.quadtree_nodes, s.storing_cells, s.conflict_entries, s.matched_edges, s.proxy_vertices),
            (0, 0, 0, 0, 0)
        );
    }

    #[test]
    fn random_workload_matches_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut e = Engine::new();
        let mut o = Oracle::new();
        let mut live: Vec<SquareId> = Vec::new();
        for i in 0..300u64 {
            if live.len() > 5 && rng.random_bool(0.3) {
                let victim = live.swap_remove(rng.random_range(0..live.len()));
                e.delete(victim).unwrap();
                o.delete(victim).unwrap();
            } else {
                let side = 1i64 << rng.random_range(0..6);
                let sq = Square::from_input(i, rng.random_range(0..150), rng.random_range(0..150), side)
                    .unwrap();
                e.insert(sq).unwrap();
                o.insert(sq).unwrap();
                live.push(sq.id);
            }
            if i % 10 == 0 {
                e.check_deep(&o).unwrap();
            }
            let pairs: Vec<(SquareId, SquareId)> = if i % 25 == 0 {
                live.iter().flat_map(|a| live.iter().map(move |b| (*a, *b))).collect()
            } else {
                (0..100)
                    .map(|_| {
                        let a = live[rng.random_range(0..live.len())];
                        (a, live[rng.random_range(0..live.len())])
                    })
                    .collect()
            };
            for (a, b) in pairs {
                assert_eq!(e.connected(a, b).unwrap(), o.o_connected(a, b).unwrap(), "{a} {b} at step {i}");
            }
        }
    }
}
