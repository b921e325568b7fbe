//! Brute-force reference implementations.
//!
//! Everything here is recomputed from the plain list of squares on every
//! call (connectivity is cached until the next update). Nothing is shared
//! with the incremental structures beyond the geometric primitives.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::geometry::{scale5, Cell, Rect, Region, Square, SquareId, MAX_LEVEL};

/// Plain description of the matchings, one entry per live ordered pair.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MatchingSnapshot {
    pub pairs: Vec<PairSnapshot>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairSnapshot {
    pub c1: Cell,
    pub c2: Cell,
    /// `(square in C1, square in C2)`.
    pub edges: Vec<(SquareId, SquareId)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StructuralSets {
    /// 𝒫 per square.
    pub perimeter: BTreeMap<SquareId, Vec<Cell>>,
    /// 𝒞 per square.
    pub contained: BTreeMap<SquareId, Vec<Cell>>,
    /// 𝒵 per storing cell.
    pub inverse: BTreeMap<Cell, Vec<Cell>>,
    pub counters: BTreeMap<Cell, u32>,
}

#[derive(Clone, Debug, Default)]
pub struct Oracle {
    squares: BTreeMap<SquareId, Square>,
    components: RefCell<Option<BTreeMap<SquareId, usize>>>,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn contained_among(cells: &BTreeSet<Cell>, r: &Rect) -> Vec<Cell> {
    let mut out = BTreeSet::new();
    for d in cells {
        if !r.contains(&d.rect()) {
            continue;
        }
        for level in d.level..=MAX_LEVEL {
            let a = d.ancestor(level);
            if level == MAX_LEVEL || !r.contains(&a.parent().rect()) {
                out.insert(a);
                break;
            }
        }
    }
    out.into_iter().collect()
}

fn perimeter_among(cells: &BTreeSet<Cell>, sq: &Square) -> Vec<Cell> {
    let r = sq.rect();
    cells
        .iter()
        .filter(|c| c.side() <= sq.side)
        .filter(|c| {
            let k = scale5(c);
            r.intersects(&k) && !r.contains_in_interior(&k)
        })
        .copied()
        .collect()
}

impl Oracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.squares.len()
    }

    pub fn is_empty(&self) -> bool {
        self.squares.is_empty()
    }

    pub fn insert(&mut self, sq: Square) -> Result<()> {
        if self.squares.contains_key(&sq.id) {
            return Err(Error::DuplicateSquare(sq.id));
        }
        self.squares.insert(sq.id, sq);
        self.components.replace(None);
        Ok(())
    }

    pub fn delete(&mut self, id: SquareId) -> Result<Square> {
        let sq = self.squares.remove(&id).ok_or(Error::UnknownSquare(id))?;
        self.components.replace(None);
        Ok(sq)
    }

    pub fn get(&self, id: SquareId) -> Option<&Square> {
        self.squares.get(&id)
    }

    pub fn squares(&self) -> impl Iterator<Item = &Square> {
        self.squares.values()
    }

    /// Every intersecting pair, by a sweep over left edges.
    pub fn intersecting_pairs(&self) -> Vec<(SquareId, SquareId)> {
        let mut v: Vec<&Square> = self.squares.values().collect();
        v.sort_by_key(|s| (s.x, s.id));
        let mut out = Vec::new();
        for (i, a) in v.iter().enumerate() {
            let ar = a.rect();
            for b in &v[i + 1..] {
                if b.x > ar.x_hi {
                    break;
                }
                if ar.intersects(&b.rect()) {
                    out.push((a.id, b.id));
                }
            }
        }
        out
    }

    fn component_map(&self) -> BTreeMap<SquareId, usize> {
        let ids: Vec<SquareId> = self.squares.keys().copied().collect();
        let pos: BTreeMap<SquareId, usize> =
            ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let mut parent: Vec<usize> = (0..ids.len()).collect();
        for (a, b) in self.intersecting_pairs() {
            let (ra, rb) = (find(&mut parent, pos[&a]), find(&mut parent, pos[&b]));
            parent[ra] = rb;
        }
        ids.iter()
            .map(|id| (*id, find(&mut parent, pos[id])))
            .collect()
    }

    pub fn o_connected(&self, a: SquareId, b: SquareId) -> Result<bool> {
        for id in [a, b] {
            if !self.squares.contains_key(&id) {
                return Err(Error::UnknownSquare(id));
            }
        }
        let mut cache = self.components.borrow_mut();
        let comp = cache.get_or_insert_with(|| self.component_map());
        Ok(comp[&a] == comp[&b])
    }

    pub fn storing_cells(&self) -> BTreeSet<Cell> {
        self.squares.values().map(|s| s.storing_cell()).collect()
    }

    /// π(C), sorted by id.
    pub fn squares_at(&self, c: &Cell) -> Vec<Square> {
        self.squares
            .values()
            .filter(|s| s.storing_cell() == *c)
            .copied()
            .collect()
    }

    /// 𝒫(sq) straight from the definition.
    pub fn o_perimeter(&self, sq: &Square) -> Vec<Cell> {
        perimeter_among(&self.storing_cells(), sq)
    }

    /// Maximal dyadic cells inside `r` that contain a storing cell.
    pub fn o_contained_cells(&self, r: &Rect) -> Vec<Cell> {
        contained_among(&self.storing_cells(), r)
    }

    /// 𝒵(c) by checking every stored square's perimeter.
    pub fn o_inverse_perimeter(&self, c: &Cell) -> Vec<Cell> {
        let cells = self.storing_cells();
        let mut out = BTreeSet::new();
        for s in self.squares.values() {
            if perimeter_among(&cells, s).contains(c) {
                out.insert(s.storing_cell());
            }
        }
        out.into_iter().collect()
    }

    /// Mark counts: how many squares list each cell in their containment set.
    pub fn o_counters(&self) -> BTreeMap<Cell, u32> {
        self.o_structural_sets().counters
    }

    /// Every per-square set and the mark counts, from one pass over the
    /// storing cells.
    pub fn o_structural_sets(&self) -> StructuralSets {
        let cells = self.storing_cells();
        let mut out = StructuralSets {
            inverse: cells.iter().map(|c| (*c, Vec::new())).collect(),
            ..StructuralSets::default()
        };
        for s in self.squares.values() {
            let perimeter = perimeter_among(&cells, s);
            for c in &perimeter {
                let z = out.inverse.get_mut(c).unwrap();
                if !z.contains(&s.storing_cell()) {
                    z.push(s.storing_cell());
                }
            }
            let contained = contained_among(&cells, &s.rect());
            for c in &contained {
                *out.counters.entry(*c).or_insert(0) += 1;
            }
            out.perimeter.insert(s.id, perimeter);
            out.contained.insert(s.id, contained);
        }
        for z in out.inverse.values_mut() {
            z.sort();
        }
        out
    }

    /// Validity and maximality of every matching in `snap`.
    pub fn o_check_matchings(&self, snap: &MatchingSnapshot) -> std::result::Result<(), String> {
        let cells = self.storing_cells();
        let perims: BTreeMap<SquareId, Vec<Cell>> = self
            .squares
            .values()
            .map(|s| (s.id, perimeter_among(&cells, s)))
            .collect();
        let mut matched: BTreeMap<(Cell, Cell), (BTreeSet<SquareId>, BTreeSet<SquareId>)> =
            BTreeMap::new();
        for p in &snap.pairs {
            if p.c1 == p.c2 {
                return Err(format!("self pair at {}", p.c1));
            }
            if p.edges.is_empty() {
                return Err(format!("empty pair {} -> {}", p.c1, p.c2));
            }
            let entry = matched.entry((p.c1, p.c2)).or_default();
            if !entry.0.is_empty() {
                return Err(format!("pair {} -> {} listed twice", p.c1, p.c2));
            }
            for &(g, r) in &p.edges {
                let (Some(gs), Some(rs)) = (self.squares.get(&g), self.squares.get(&r)) else {
                    return Err(format!("edge ({g}, {r}) names a missing square"));
                };
                if gs.storing_cell() != p.c1 || rs.storing_cell() != p.c2 {
                    return Err(format!("edge ({g}, {r}) not stored at {} -> {}", p.c1, p.c2));
                }
                if !perims[&g].contains(&p.c2) {
                    return Err(format!("edge ({g}, {r}): {} not on the perimeter of {g}", p.c2));
                }
                if !gs.rect().intersects(&rs.rect()) {
                    return Err(format!("edge ({g}, {r}) joins disjoint squares"));
                }
                if !entry.0.insert(g) || !entry.1.insert(r) {
                    return Err(format!("pair {} -> {} is not a matching", p.c1, p.c2));
                }
            }
        }
        let empty = (BTreeSet::new(), BTreeSet::new());
        let check = |g: &Square, r: &Square| -> std::result::Result<(), String> {
            let (c1, c2) = (g.storing_cell(), r.storing_cell());
            if c1 == c2 || !perims[&g.id].contains(&c2) {
                return Ok(());
            }
            let m = matched.get(&(c1, c2)).unwrap_or(&empty);
            if !m.0.contains(&g.id) && !m.1.contains(&r.id) {
                return Err(format!(
                    "pair {c1} -> {c2} not maximal: {} and {} are free and intersect",
                    g.id, r.id
                ));
            }
            Ok(())
        };
        for (a, b) in self.intersecting_pairs() {
            let (sa, sb) = (self.squares[&a], self.squares[&b]);
            check(&sa, &sb)?;
            check(&sb, &sa)?;
        }
        Ok(())
    }
}
