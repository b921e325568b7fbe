//! Per-cell square storage plus the global indexes over storing cells.
//!
//! `cell_index` holds every storing cell by its own extent, `scaled_index`
//! by its 5x-scaled extent (with the true side in the `s` coordinate). All
//! cell-set queries (containment sets, perimeters, inverse perimeters,
//! uphill candidates) are box queries on these two trees or on the per-cell
//! square trees.

use std::collections::BTreeMap;

use rustc_hash::FxHashMap;

use crate::conflict::{
    boxes_and, boxes_boundary_intersecting, boxes_contained_in, boxes_containing,
    boxes_intersecting, boxes_max_side, boxes_meeting_boundary_of, boxes_min_side, boxes_minus, Box5, ConflictTree, DIM_B,
    DIM_L, DIM_R, DIM_T,
};
use crate::error::{Error, Result};
use crate::geometry::{scale5, Cell, Rect, Region, Square, SquareId, MAX_LEVEL};

#[derive(Clone, Debug, Default)]
pub struct Registry {
    cells: FxHashMap<Cell, ConflictTree<SquareId>>,
    cell_index: ConflictTree<Cell>,
    scaled_index: ConflictTree<Cell>,
    levels: BTreeMap<u8, u32>,
}

fn cell_point(c: &Cell) -> [i64; 5] {
    let r = c.rect();
    [c.side(), r.x_lo, r.x_hi, r.y_lo, r.y_hi]
}

fn scaled_point(c: &Cell) -> [i64; 5] {
    let r = scale5(c);
    [c.side(), r.x_lo, r.x_hi, r.y_lo, r.y_hi]
}

/// Entries whose interior overlaps the interior of `p`.
fn boxes_interior_overlapping(p: &Rect) -> Vec<Box5> {
    vec![Box5::all()
        .at_most(DIM_L, p.x_hi - 1)
        .at_least(DIM_R, p.x_lo + 1)
        .at_most(DIM_B, p.y_hi - 1)
        .at_least(DIM_T, p.y_lo + 1)]
}

/// Largest ancestor-or-self of `c` that still fits in `r`.
pub fn maximal_ancestor_within(c: &Cell, r: &Rect) -> Cell {
    let mut a = *c;
    while a.level < MAX_LEVEL && r.contains(&a.parent().rect()) {
        a = a.parent();
    }
    a
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Store `sq` at its storing cell; true if that cell was empty before.
    pub fn insert_square(&mut self, sq: &Square) -> Result<bool> {
        let c = sq.storing_cell();
        let tree = self.cells.entry(c).or_default();
        if tree.contains_key(&sq.id) {
            return Err(Error::DuplicateSquare(sq.id));
        }
        tree.insert(sq.id, sq.point())?;
        let fresh = tree.len() == 1;
        if fresh {
            self.cell_index.insert(c, cell_point(&c))?;
            self.scaled_index.insert(c, scaled_point(&c))?;
            *self.levels.entry(c.level).or_insert(0) += 1;
        }
        Ok(fresh)
    }

    /// Remove `sq`; true if its storing cell became empty.
    pub fn remove_square(&mut self, sq: &Square) -> Result<bool> {
        let c = sq.storing_cell();
        let tree = self
            .cells
            .get_mut(&c)
            .ok_or(Error::UnknownSquare(sq.id))?;
        tree.delete(&sq.id).map_err(|_| Error::UnknownSquare(sq.id))?;
        if !tree.is_empty() {
            return Ok(false);
        }
        self.cells.remove(&c);
        self.cell_index.delete(&c)?;
        self.scaled_index.delete(&c)?;
        let n = self.levels.get_mut(&c.level).unwrap();
        *n -= 1;
        if *n == 0 {
            self.levels.remove(&c.level);
        }
        Ok(true)
    }

    pub fn tree(&self, c: &Cell) -> Option<&ConflictTree<SquareId>> {
        self.cells.get(c)
    }

    pub fn tree_mut(&mut self, c: &Cell) -> Option<&mut ConflictTree<SquareId>> {
        self.cells.get_mut(c)
    }

    pub fn is_storing(&self, c: &Cell) -> bool {
        self.cells.contains_key(c)
    }

    /// π(C), sorted by id.
    pub fn squares_at(&self, c: &Cell) -> Vec<Square> {
        self.cells.get(c).map_or_else(Vec::new, |t| {
            t.entries()
                .into_iter()
                .map(|(id, p)| Square::from_point(id, &p))
                .collect()
        })
    }

    /// All storing cells, Morton-sorted.
    pub fn storing_cells(&self) -> Vec<Cell> {
        let mut out: Vec<Cell> = self.cells.keys().copied().collect();
        out.sort();
        out
    }

    pub fn storing_count(&self) -> usize {
        self.cells.len()
    }

    pub fn max_level(&self) -> Option<u8> {
        self.levels.keys().next_back().copied()
    }

    /// Counter entries across every tree, for space statistics.
    pub fn conflict_entries(&self) -> usize {
        self.cells.values().map(|t| t.count_entries()).sum::<usize>()
            + self.cell_index.count_entries()
            + self.scaled_index.count_entries()
    }

    pub fn contains_storing_cell(&self, r: &Rect) -> bool {
        self.cell_index.count(&boxes_contained_in(r)) > 0
    }

    /// Maximal dyadic cells inside `r` that contain at least one storing
    /// cell, Morton-sorted.
    pub fn report_contained_cells(&self, r: &Rect) -> Vec<Cell> {
        let inside = boxes_contained_in(r);
        let mut out = Vec::new();
        let mut pieces = vec![*r];
        while let Some(p) = pieces.pop() {
            if p.width() == 0 || p.height() == 0 {
                continue;
            }
            let q = boxes_and(&inside, &boxes_interior_overlapping(&p));
            let Some((d, _)) = self.cell_index.find_excluding(&q, None) else {
                continue;
            };
            let a = maximal_ancestor_within(&d, r);
            out.push(a);
            let ar = a.rect();
            let (x0, x1) = (ar.x_lo.max(p.x_lo), ar.x_hi.min(p.x_hi));
            let (y0, y1) = (ar.y_lo.max(p.y_lo), ar.y_hi.min(p.y_hi));
            pieces.push(Rect::new(p.x_lo, x0, p.y_lo, p.y_hi));
            pieces.push(Rect::new(x1, p.x_hi, p.y_lo, p.y_hi));
            pieces.push(Rect::new(x0, x1, p.y_lo, y0));
            pieces.push(Rect::new(x0, x1, y1, p.y_hi));
        }
        out.sort();
        out.dedup();
        out
    }

    /// Storing cells whose squares could contain `c`: any square containing
    /// `c` lies inside the 5x-scaling of its storing cell, which is more than
    /// a quarter of its side.
    pub fn containment_candidates(&self, c: &Cell) -> Vec<Cell> {
        let q = boxes_and(
            &boxes_containing(&c.rect()),
            &boxes_min_side((c.side() / 2).max(1)),
        );
        self.scaled_index
            .report_all(&q)
            .into_iter()
            .map(|(z, _)| z)
            .collect()
    }

    /// Squares σ with `c ∈ 𝒞(σ)`, sorted by id.
    pub fn marking_squares(&self, c: &Cell) -> Vec<Square> {
        if !self.contains_storing_cell(&c.rect()) {
            return Vec::new();
        }
        let q = boxes_minus(
            &boxes_containing(&c.rect()),
            &boxes_containing(&c.parent().rect()),
        );
        let mut out = Vec::new();
        for z in self.containment_candidates(c) {
            let t = &self.cells[&z];
            out.extend(
                t.report_all(&q)
                    .into_iter()
                    .map(|(id, p)| Square::from_point(id, &p)),
            );
        }
        out.sort_by_key(|s| s.id);
        out
    }

    /// `|{σ : c ∈ 𝒞(σ)}|` from the current squares.
    pub fn counter(&self, c: &Cell) -> u32 {
        if !self.contains_storing_cell(&c.rect()) {
            return 0;
        }
        let own = boxes_containing(&c.rect());
        let above = boxes_containing(&c.parent().rect());
        self.containment_candidates(c)
            .iter()
            .map(|z| {
                let t = &self.cells[z];
                (t.count(&own) - t.count(&above)) as u32
            })
            .sum()
    }

    /// A square marking `c`: the largest one, smallest id among equals.
    pub fn find_marking_square(&self, c: &Cell) -> Result<Square> {
        self.marking_squares(c)
            .into_iter()
            .min_by_key(|s| (std::cmp::Reverse(s.side), s.id))
            .ok_or(Error::UnmarkedCell(*c))
    }

    /// 𝒫(sq): storing cells no larger than `sq` whose 5x-scaling meets ∂sq.
    pub fn perimeter(&self, sq: &Square) -> Vec<Cell> {
        let q = boxes_and(
            &boxes_meeting_boundary_of(&sq.rect()),
            &boxes_max_side(sq.side),
        );
        let mut out: Vec<Cell> = self
            .scaled_index
            .report_all(&q)
            .into_iter()
            .map(|(c, _)| c)
            .collect();
        out.sort();
        out
    }

    /// Storing cells that could hold a square whose perimeter contains `c`.
    pub fn perimeter_candidates(&self, c: &Cell) -> Vec<Cell> {
        let q = boxes_and(
            &boxes_intersecting(&scale5(c)),
            &boxes_min_side((c.side() / 2).max(1)),
        );
        self.scaled_index
            .report_all(&q)
            .into_iter()
            .map(|(z, _)| z)
            .collect()
    }

    /// 𝒵(c): storing cells Z with `c ∈ 𝒫(γ)` for some γ ∈ π(Z).
    pub fn inverse_perimeter(&self, c: &Cell) -> Vec<Cell> {
        let q = boxes_and(
            &boxes_boundary_intersecting(&scale5(c)),
            &boxes_min_side(c.side()),
        );
        let mut out: Vec<Cell> = self
            .perimeter_candidates(c)
            .into_iter()
            .filter(|z| self.cells[z].count(&q) > 0)
            .collect();
        out.sort();
        out
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        for (c, t) in &self.cells {
            if t.is_empty() {
                return Err(format!("empty tree kept for {c}"));
            }
            if !self.cell_index.contains_key(c) || !self.scaled_index.contains_key(c) {
                return Err(format!("storing cell {c} missing from an index"));
            }
            t.check_counts()?;
        }
        if self.cell_index.len() != self.cells.len() || self.scaled_index.len() != self.cells.len()
        {
            return Err("index size differs from storing-cell count".into());
        }
        self.cell_index.check_counts()?;
        self.scaled_index.check_counts()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::Oracle;
    use proptest::prelude::*;

    fn sq(id: u64, x: i64, y: i64, side: i64) -> Square {
        Square::from_input(id, x, y, side).unwrap()
    }

    fn build(squares: &[Square]) -> (Registry, Oracle) {
        let mut r = Registry::new();
        let mut o = Oracle::new();
        for s in squares {
            r.insert_square(s).unwrap();
            o.insert(*s).unwrap();
        }
        (r, o)
    }

    #[test]
    fn contained_cells_single_storing_cell() {
        // World [8,12]^2 is the storing cell of input (2,2,1).
        let (r, _) = build(&[sq(1, 2, 2, 1)]);
        let q = Rect::new(4, 20, 4, 20);
        assert_eq!(r.report_contained_cells(&q), vec![Cell::new(3, 1, 1)]);
        assert!(r.report_contained_cells(&Rect::new(40, 60, 40, 60)).is_empty());
        assert!(Registry::new().report_contained_cells(&q).is_empty());
    }

    #[test]
    fn contained_cells_nested_reported_once() {
        // Storing cells [0,4]^2 (level 2) and [0,16]^2 (level 4).
        let (r, _) = build(&[sq(1, 0, 0, 1), sq(2, 0, 0, 4)]);
        let q = Rect::new(0, 20, 0, 20);
        assert_eq!(r.report_contained_cells(&q), vec![Cell::new(4, 0, 0)]);
    }

    #[test]
    fn counter_examples() {
        let big = sq(1, 0, 0, 64);
        let small = sq(2, 10, 10, 1);
        let (r, _) = build(&[big, small]);
        let a = maximal_ancestor_within(&small.storing_cell(), &big.rect());
        assert!(a.level > small.storing_cell().level);
        assert_eq!(r.counter(&a), 1);
        assert_eq!(r.counter(&a.parent()), 0);
        assert_eq!(Registry::new().counter(&a), 0);
        let (r2, _) = build(&[big, sq(3, 0, 0, 64), small]);
        assert_eq!(r2.counter(&a), 2);
        assert_eq!(r2.find_marking_square(&a).unwrap().id, SquareId(1));
        assert!(r.find_marking_square(&a.parent()).is_err());
    }

    #[test]
    fn perimeter_examples() {
        // sq world [0,8]^2; storing cell [8,12]^2 (level 2) has scale5 [0,20]^2.
        let host = sq(1, 0, 0, 2);
        let (r, _) = build(&[sq(2, 2, 2, 1)]);
        assert_eq!(r.perimeter(&host), vec![Cell::new(2, 2, 2)]);
        // Cell deep inside a large square is excluded.
        let (r, _) = build(&[sq(2, 50, 50, 1)]);
        assert!(r.perimeter(&sq(1, 0, 0, 100)).is_empty());
        // Cell larger than the square is excluded.
        let (r, _) = build(&[sq(2, 0, 0, 16)]);
        assert!(r.perimeter(&sq(1, 15, 15, 2)).is_empty());
    }

    #[test]
    fn inverse_perimeter_examples() {
        let big = sq(1, 0, 0, 32);
        let edge = sq(2, 31, 10, 1);
        let (r, _) = build(&[big, edge]);
        let c = edge.storing_cell();
        assert!(r.inverse_perimeter(&c).contains(&big.storing_cell()));
        let (r, _) = build(&[big, sq(3, 14, 14, 1)]);
        assert_eq!(r.inverse_perimeter(&sq(3, 14, 14, 1).storing_cell()), vec![sq(3, 14, 14, 1).storing_cell()]);
    }

    #[test]
    fn insert_remove_round_trip() {
        let mut r = Registry::new();
        let a = sq(1, 3, 3, 2);
        assert!(r.insert_square(&a).unwrap());
        assert!(r.insert_square(&a).is_err());
        assert!(r.remove_square(&a).unwrap());
        assert!(r.remove_square(&a).is_err());
        assert_eq!(r.storing_count(), 0);
        assert_eq!(r.conflict_entries(), 0);
    }

    fn arb_squares() -> impl Strategy<Value = Vec<Square>> {
        proptest::collection::vec((0i64..80, 0i64..80, 0u32..6), 1..40).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (x, y, e))| sq(i as u64, x, y, 1 << e))
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(150))]

        #[test]
        fn sets_match_definitions(squares in arb_squares(), probe in (0i64..100, 0i64..100, 0u32..7)) {
            let (r, o) = build(&squares);
            prop_assert!(r.check().is_ok());
            let p = sq(999, probe.0, probe.1, 1 << probe.2);
            prop_assert_eq!(r.perimeter(&p), o.o_perimeter(&p));
            prop_assert_eq!(r.report_contained_cells(&p.rect()), o.o_contained_cells(&p.rect()));
            for s in &squares {
                let c = s.storing_cell();
                prop_assert_eq!(r.inverse_perimeter(&c), o.o_inverse_perimeter(&c));
                prop_assert_eq!(r.perimeter(s), o.o_perimeter(s));
                prop_assert_eq!(r.report_contained_cells(&s.rect()), o.o_contained_cells(&s.rect()));
            }
            let counters = o.o_counters();
            for (cell, n) in &counters {
                prop_assert_eq!(r.counter(cell), *n, "cell {}", cell);
                let markers: Vec<SquareId> = r.marking_squares(cell).iter().map(|s| s.id).collect();
                prop_assert_eq!(markers.len() as u32, *n);
            }
            for s in &squares {
                for l in s.storing_cell().level..s.storing_cell().level + 8 {
                    let a = s.storing_cell().ancestor(l);
                    prop_assert_eq!(r.counter(&a), counters.get(&a).copied().unwrap_or(0));
                }
            }
        }
    }
}
