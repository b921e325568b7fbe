//! Maximal bichromatic matchings between storing-cell pairs.
//!
//! For an ordered pair `(C1, C2)` the red side is every γ ∈ π(C1) with
//! `C2 ∈ 𝒫(γ)` and the blue side is π(C2). A pair is materialized only while
//! it holds at least one edge; its matched endpoints are conflict sets
//! `2·id` (in C1's tree) and `2·id + 1` (in C2's tree), so a free partner is
//! one conflict-excluding query away.

use std::collections::BTreeMap;

use rustc_hash::FxHashMap;
use smallvec::SmallVec;

use crate::conflict::{
    boxes_and, boxes_boundary_intersecting, boxes_intersecting, boxes_min_side, Box5, SetId,
};
use crate::error::{Error, Result};
use crate::geometry::{scale5, Cell, Region, Square, SquareId};
use crate::oracle::{MatchingSnapshot, PairSnapshot};
use crate::registry::Registry;

pub type PairKey = (Cell, Cell);

#[derive(Clone, Debug, Default)]
struct PairState {
    id: u64,
    /// red → blue
    red: BTreeMap<SquareId, SquareId>,
    /// blue → red
    blue: BTreeMap<SquareId, SquareId>,
}

impl PairState {
    fn r_set(&self) -> SetId {
        2 * self.id
    }

    fn b_set(&self) -> SetId {
        2 * self.id + 1
    }
}

/// A square whose partner was removed and that must be offered again.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Orphan {
    pub pair: PairKey,
    pub square: SquareId,
    pub red: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Matching {
    pairs: FxHashMap<PairKey, PairState>,
    by_square: FxHashMap<SquareId, SmallVec<[PairKey; 4]>>,
    next_id: u64,
    edges: usize,
    rematches: u64,
    touched: BTreeMap<PairKey, bool>,
}

/// Squares γ in C1's tree with `C2 ∈ 𝒫(γ)`.
pub fn eligibility_boxes(c2: &Cell) -> Vec<Box5> {
    boxes_and(
        &boxes_min_side(c2.side()),
        &boxes_boundary_intersecting(&scale5(c2)),
    )
}

impl Matching {
    pub fn new() -> Self {
        Self::default()
    }

    /// Total number of matched edges over all pairs.
    pub fn edge_count(&self) -> usize {
        self.edges
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn rematches(&self) -> u64 {
        self.rematches
    }

    pub fn is_active(&self, key: &PairKey) -> bool {
        self.pairs.contains_key(key)
    }

    pub fn edges_of(&self, key: &PairKey) -> Vec<(SquareId, SquareId)> {
        self.pairs
            .get(key)
            .map(|p| p.red.iter().map(|(g, r)| (*g, *r)).collect())
            .unwrap_or_default()
    }

    fn note(&mut self, key: PairKey) {
        let active = self.pairs.contains_key(&key);
        self.touched.entry(key).or_insert(active);
    }

    /// Pairs whose activity changed since the last call: `(pair, now_active)`.
    pub fn take_transitions(&mut self) -> Vec<(PairKey, bool)> {
        let touched = std::mem::take(&mut self.touched);
        touched
            .into_iter()
            .filter_map(|(k, before)| {
                let now = self.pairs.contains_key(&k);
                (now != before).then_some((k, now))
            })
            .collect()
    }

    fn add_edge(&mut self, reg: &mut Registry, key: PairKey, g: SquareId, r: SquareId) -> Result<()> {
        self.note(key);
        let next_id = &mut self.next_id;
        let pair = self.pairs.entry(key).or_insert_with(|| {
            let p = PairState {
                id: *next_id,
                ..PairState::default()
            };
            *next_id += 1;
            p
        });
        pair.red.insert(g, r);
        pair.blue.insert(r, g);
        let (rs, bs) = (pair.r_set(), pair.b_set());
        reg.tree_mut(&key.0).ok_or(Error::UnknownSquare(g))?.join(&g, rs)?;
        reg.tree_mut(&key.1).ok_or(Error::UnknownSquare(r))?.join(&r, bs)?;
        self.by_square.entry(g).or_default().push(key);
        self.by_square.entry(r).or_default().push(key);
        self.edges += 1;
        Ok(())
    }

    fn remove_edge(&mut self, reg: &mut Registry, key: PairKey, g: SquareId, r: SquareId) -> Result<()> {
        self.note(key);
        let pair = self.pairs.get_mut(&key).ok_or(Error::NotMatched(g))?;
        pair.red.remove(&g);
        pair.blue.remove(&r);
        let (rs, bs) = (pair.r_set(), pair.b_set());
        if pair.red.is_empty() {
            self.pairs.remove(&key);
        }
        if let Some(t) = reg.tree_mut(&key.0) {
            t.leave(&g, rs)?;
        }
        if let Some(t) = reg.tree_mut(&key.1) {
            t.leave(&r, bs)?;
        }
        for id in [g, r] {
            let list = self.by_square.get_mut(&id).unwrap();
            let pos = list.iter().position(|k| *k == key).unwrap();
            list.swap_remove(pos);
            if list.is_empty() {
                self.by_square.remove(&id);
            }
        }
        self.edges -= 1;
        Ok(())
    }

    /// Offer blue square `rho` ∈ π(C2) to the pair `(C1, C2)`.
    pub fn try_match_b_side(&mut self, reg: &mut Registry, key: PairKey, rho: &Square) -> Result<Option<SquareId>> {
        let set = self.pairs.get(&key).map(|p| p.r_set());
        let Some(t1) = reg.tree(&key.0) else {
            return Ok(None);
        };
        let q = boxes_and(&eligibility_boxes(&key.1), &boxes_intersecting(&rho.rect()));
        let Some((g, _)) = t1.find_excluding(&q, set) else {
            return Ok(None);
        };
        self.add_edge(reg, key, g, rho.id)?;
        Ok(Some(g))
    }

    /// Offer red square `gamma` ∈ π(C1) (already eligible) to `(C1, C2)`.
    pub fn try_match_r_side(&mut self, reg: &mut Registry, key: PairKey, gamma: &Square) -> Result<Option<SquareId>> {
        let set = self.pairs.get(&key).map(|p| p.b_set());
        let Some(t2) = reg.tree(&key.1) else {
            return Ok(None);
        };
        let Some((r, _)) = t2.find_excluding(&boxes_intersecting(&gamma.rect()), set) else {
            return Ok(None);
        };
        self.add_edge(reg, key, gamma.id, r)?;
        Ok(Some(r))
    }

    /// Match a freshly stored square into every pair it can join.
    pub fn on_square_inserted(
        &mut self,
        reg: &mut Registry,
        sq: &Square,
        perimeter: &[Cell],
        inverse: &[Cell],
    ) -> Result<()> {
        let c = sq.storing_cell();
        for c2 in perimeter.iter().filter(|x| **x != c) {
            self.try_match_r_side(reg, (c, *c2), sq)?;
        }
        for z in inverse.iter().filter(|x| **x != c) {
            self.try_match_b_side(reg, (*z, c), sq)?;
        }
        Ok(())
    }

    /// Drop every edge of `id` and return the partners left without one.
    /// Call before the square leaves the registry.
    pub fn detach(&mut self, reg: &mut Registry, id: SquareId) -> Result<Vec<Orphan>> {
        let keys: Vec<PairKey> = self.by_square.get(&id).map(|v| v.to_vec()).unwrap_or_default();
        let mut out = Vec::new();
        for key in keys {
            let red_partner = self.pairs[&key].red.get(&id).copied();
            if let Some(r) = red_partner {
                self.remove_edge(reg, key, id, r)?;
                out.push(Orphan {
                    pair: key,
                    square: r,
                    red: false,
                });
            } else {
                let g = self.pairs[&key].blue[&id];
                self.remove_edge(reg, key, g, id)?;
                out.push(Orphan {
                    pair: key,
                    square: g,
                    red: true,
                });
            }
        }
        Ok(out)
    }

    /// Unmatch `id` in one pair and re-offer its partner. `id` stays a
    /// candidate, so this is mostly useful to exercise the rematch path.
    pub fn unmatch_and_rematch(&mut self, reg: &mut Registry, key: PairKey, id: SquareId) -> Result<()> {
        let pair = self.pairs.get(&key).ok_or(Error::NotMatched(id))?;
        let (red_partner, blue_partner) = (pair.red.get(&id).copied(), pair.blue.get(&id).copied());
        let orphan = if let Some(r) = red_partner {
            self.remove_edge(reg, key, id, r)?;
            Orphan { pair: key, square: r, red: false }
        } else if let Some(g) = blue_partner {
            self.remove_edge(reg, key, g, id)?;
            Orphan { pair: key, square: g, red: true }
        } else {
            return Err(Error::NotMatched(id));
        };
        self.rematch(reg, &[orphan])
    }

    /// Re-offer orphaned partners once the departed square is gone.
    pub fn rematch(&mut self, reg: &mut Registry, orphans: &[Orphan]) -> Result<()> {
        for o in orphans {
            let home = if o.red { o.pair.0 } else { o.pair.1 };
            let Some(p) = reg.tree(&home).and_then(|t| t.point(&o.square)) else {
                continue;
            };
            let sq = Square::from_point(o.square, &p);
            let hit = if o.red {
                self.try_match_r_side(reg, o.pair, &sq)?
            } else {
                self.try_match_b_side(reg, o.pair, &sq)?
            };
            if hit.is_some() {
                self.rematches += 1;
            }
        }
        Ok(())
    }

    pub fn snapshot(&self) -> MatchingSnapshot {
        let mut pairs: Vec<PairSnapshot> = self
            .pairs
            .iter()
            .map(|(k, p)| PairSnapshot {
                c1: k.0,
                c2: k.1,
                edges: p.red.iter().map(|(g, r)| (*g, *r)).collect(),
            })
            .collect();
        pairs.sort_by_key(|p| (p.c1, p.c2));
        MatchingSnapshot { pairs }
    }

    /// Conflict-set contents equal the matched endpoints of every pair.
    pub fn check_sets(&self, reg: &Registry) -> std::result::Result<(), String> {
        let mut total = 0;
        for (k, p) in &self.pairs {
            if p.red.is_empty() || p.red.len() != p.blue.len() {
                return Err(format!("pair {} -> {} is malformed", k.0, k.1));
            }
            let (Some(t1), Some(t2)) = (reg.tree(&k.0), reg.tree(&k.1)) else {
                return Err(format!("pair {} -> {} names a non-storing cell", k.0, k.1));
            };
            let reds: Vec<SquareId> = p.red.keys().copied().collect();
            let blues: Vec<SquareId> = p.blue.keys().copied().collect();
            if t1.set_members(p.r_set()) != reds || t2.set_members(p.b_set()) != blues {
                return Err(format!("conflict sets of {} -> {} are stale", k.0, k.1));
            }
            if t1.set_size(p.r_set()) as usize != reds.len() {
                return Err(format!("root count of {} -> {} is stale", k.0, k.1));
            }
            total += reds.len();
        }
        if total != self.edges {
            return Err("edge total is stale".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conflict::ConflictTree;
    use crate::oracle::Oracle;

    fn sq(id: u64, x: i64, y: i64, side: i64) -> Square {
        Square::from_input(id, x, y, side).unwrap()
    }

    struct World {
        reg: Registry,
        m: Matching,
        o: Oracle,
    }

    impl World {
        fn new() -> Self {
            Self {
                reg: Registry::new(),
                m: Matching::new(),
                o: Oracle::new(),
            }
        }

        fn insert(&mut self, s: Square) {
            self.reg.insert_square(&s).unwrap();
            self.o.insert(s).unwrap();
            let per = self.reg.perimeter(&s);
            let inv = self.reg.inverse_perimeter(&s.storing_cell());
            self.m.on_square_inserted(&mut self.reg, &s, &per, &inv).unwrap();
        }

        fn delete(&mut self, s: Square) {
            let orphans = self.m.detach(&mut self.reg, s.id).unwrap();
            self.reg.remove_square(&s).unwrap();
            self.o.delete(s.id).unwrap();
            self.m.rematch(&mut self.reg, &orphans).unwrap();
        }

        fn check(&self) {
            self.o.o_check_matchings(&self.m.snapshot()).unwrap();
            self.m.check_sets(&self.reg).unwrap();
        }
    }

    #[test]
    fn eligibility_examples() {
        // scale5 of (3 10 10) is [64,104]^2.
        let c2 = Cell::new(3, 10, 10);
        let mut t = ConflictTree::new();
        t.insert(1u64, sq(1, 0, 0, 20).point()).unwrap();
        assert_eq!(t.count(&eligibility_boxes(&c2)), 1);
        let mut t = ConflictTree::new();
        t.insert(2u64, sq(2, 0, 0, 100).point()).unwrap();
        assert_eq!(t.count(&eligibility_boxes(&c2)), 0);
        let mut t = ConflictTree::new();
        t.insert(3u64, sq(3, 18, 18, 1).point()).unwrap();
        assert_eq!(t.count(&eligibility_boxes(&c2)), 0);
    }

    #[test]
    fn worked_pair() {
        let mut w = World::new();
        w.insert(sq(1, 0, 0, 4));
        assert!(w.m.take_transitions().is_empty());
        w.insert(sq(2, 3, 3, 4));
        let key = (Cell::new(4, 0, 0), Cell::new(3, 2, 2));
        assert_eq!(w.m.edges_of(&key), vec![(SquareId(1), SquareId(2))]);
        let tr = w.m.take_transitions();
        assert!(tr.contains(&(key, true)));
        w.check();
    }

    #[test]
    fn isolated_square_has_no_pairs() {
        let mut w = World::new();
        w.insert(sq(1, 0, 0, 4));
        w.insert(sq(2, 500, 500, 4));
        assert_eq!(w.m.pair_count(), 0);
        w.check();
    }

    #[test]
    fn partner_rematches_after_delete() {
        let mut w = World::new();
        let g1 = sq(1, 0, 0, 4);
        let g2 = sq(2, 0, 0, 5);
        let rho = sq(3, 3, 3, 4);
        assert_eq!(g1.storing_cell(), g2.storing_cell());
        w.insert(g1);
        w.insert(g2);
        w.insert(rho);
        let key = (g1.storing_cell(), rho.storing_cell());
        let first = w.m.edges_of(&key)[0].0;
        w.m.take_transitions();
        w.delete(if first == g1.id { g1 } else { g2 });
        assert_eq!(w.m.edges_of(&key).len(), 1);
        assert!(!w.m.take_transitions().iter().any(|(k, _)| *k == key));
        assert!(w.m.rematches() >= 1);
        w.check();
    }

    #[test]
    fn sole_edge_removal_deactivates() {
        let mut w = World::new();
        let a = sq(1, 0, 0, 4);
        let b = sq(2, 3, 3, 4);
        w.insert(a);
        w.insert(b);
        w.m.take_transitions();
        w.delete(b);
        let tr = w.m.take_transitions();
        assert!(tr.contains(&((a.storing_cell(), b.storing_cell()), false)));
        assert_eq!(w.m.edge_count(), 0);
        w.check();
    }

    #[test]
    fn unmatch_errors_on_free_square() {
        let mut w = World::new();
        w.insert(sq(1, 0, 0, 4));
        w.insert(sq(2, 3, 3, 4));
        w.insert(sq(3, 50, 50, 1));
        let key = (Cell::new(4, 0, 0), Cell::new(3, 2, 2));
        assert!(w.m.unmatch_and_rematch(&mut w.reg, key, SquareId(3)).is_err());
        w.m.unmatch_and_rematch(&mut w.reg, key, SquareId(1)).unwrap();
        assert_eq!(w.m.edges_of(&key).len(), 1);
        w.check();
    }

    #[test]
    fn random_churn_stays_maximal() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut w = World::new();
        let mut live: Vec<Square> = Vec::new();
        for id in 0..600u64 {
            if live.len() > 10 && rng.random_bool(0.35) {
                let s = live.swap_remove(rng.random_range(0..live.len()));
                w.delete(s);
            } else {
                let side = 1i64 << rng.random_range(0..5);
                let s = sq(id, rng.random_range(0..120), rng.random_range(0..120), side);
                w.insert(s);
                live.push(s);
            }
            w.check();
        }
    }
}
