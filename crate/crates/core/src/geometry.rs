//! Exact integer geometry: squares, dyadic cells and closed-rectangle predicates.
//!
//! Input coordinates are multiplied by [`WORLD_SCALE`] on ingestion so that
//! square centers and 5x-scaled cells land on integers. Everything in this
//! module after [`Square::from_input`] works in those world units.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Factor between input units and world units.
pub const WORLD_SCALE: i64 = 4;

/// Largest admissible input coordinate (inclusive upper edge of any square).
pub const INPUT_LIMIT: i64 = 1 << 40;

/// Highest cell level that can ever matter: a level-43 cell covers the whole
/// world-unit quadrant `[0, 2^42]`.
pub const MAX_LEVEL: u8 = 43;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SquareId(pub u64);

impl fmt::Display for SquareId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Closed axis-aligned rectangle in world units. May be degenerate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x_lo: i64,
    pub x_hi: i64,
    pub y_lo: i64,
    pub y_hi: i64,
}

impl Rect {
    pub fn new(x_lo: i64, x_hi: i64, y_lo: i64, y_hi: i64) -> Self {
        debug_assert!(x_lo <= x_hi && y_lo <= y_hi, "inverted rect");
        Self {
            x_lo,
            x_hi,
            y_lo,
            y_hi,
        }
    }

    pub fn square(x_lo: i64, y_lo: i64, side: i64) -> Self {
        Self::new(x_lo, x_lo + side, y_lo, y_lo + side)
    }

    pub fn width(&self) -> i64 {
        self.x_hi - self.x_lo
    }

    pub fn height(&self) -> i64 {
        self.y_hi - self.y_lo
    }

    /// Closed intersection: touching boundaries count.
    pub fn intersects(&self, other: &Rect) -> bool {
        self.x_lo <= other.x_hi
            && other.x_lo <= self.x_hi
            && self.y_lo <= other.y_hi
            && other.y_lo <= self.y_hi
    }

    pub fn contains(&self, other: &Rect) -> bool {
        self.x_lo <= other.x_lo
            && other.x_hi <= self.x_hi
            && self.y_lo <= other.y_lo
            && other.y_hi <= self.y_hi
    }

    /// `other` lies in the open interior of `self`.
    pub fn contains_in_interior(&self, other: &Rect) -> bool {
        self.x_lo < other.x_lo
            && other.x_hi < self.x_hi
            && self.y_lo < other.y_lo
            && other.y_hi < self.y_hi
    }

    pub fn contains_point(&self, x: i64, y: i64) -> bool {
        self.x_lo <= x && x <= self.x_hi && self.y_lo <= y && y <= self.y_hi
    }

    /// Interiors overlap (both rectangles need positive area for this to hold).
    pub fn interiors_overlap(&self, other: &Rect) -> bool {
        self.x_lo < other.x_hi
            && other.x_lo < self.x_hi
            && self.y_lo < other.y_hi
            && other.y_lo < self.y_hi
    }

    /// `k ∩ ∂self ≠ ∅`.
    pub fn boundary_meets(&self, k: &Rect) -> bool {
        self.intersects(k) && !self.contains_in_interior(k)
    }
}

/// Anything with a closed rectangular footprint.
pub trait Region {
    fn rect(&self) -> Rect;
}

impl Region for Rect {
    fn rect(&self) -> Rect {
        *self
    }
}

pub fn intersects(a: &impl Region, b: &impl Region) -> bool {
    a.rect().intersects(&b.rect())
}

pub fn contains(a: &impl Region, b: &impl Region) -> bool {
    a.rect().contains(&b.rect())
}

/// True iff `k` meets the boundary of `sq`.
pub fn boundary_intersects(k: &Rect, sq: &impl Region) -> bool {
    sq.rect().boundary_meets(k)
}

/// A closed square stored in world units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Square {
    pub id: SquareId,
    pub x: i64,
    pub y: i64,
    pub side: i64,
}

impl Square {
    /// Validate input-unit coordinates and convert them to world units.
    pub fn from_input(id: u64, x: i64, y: i64, side: i64) -> Result<Self, Error> {
        if side < 1 {
            return Err(Error::InvalidSquare {
                id,
                reason: "side must be at least 1",
            });
        }
        if x < 0 || y < 0 {
            return Err(Error::InvalidSquare {
                id,
                reason: "coordinates must be non-negative",
            });
        }
        if side > INPUT_LIMIT || x > INPUT_LIMIT - side || y > INPUT_LIMIT - side {
            return Err(Error::InvalidSquare {
                id,
                reason: "square exceeds the 2^40 coordinate range",
            });
        }
        Ok(Self {
            id: SquareId(id),
            x: x * WORLD_SCALE,
            y: y * WORLD_SCALE,
            side: side * WORLD_SCALE,
        })
    }

    /// Rebuild a square from its dominance point `(s, l, r, b, t)`.
    pub fn from_point(id: SquareId, p: &[i64; 5]) -> Self {
        Self {
            id,
            x: p[1],
            y: p[3],
            side: p[0],
        }
    }

    pub fn point(&self) -> [i64; 5] {
        [
            self.side,
            self.x,
            self.x + self.side,
            self.y,
            self.y + self.side,
        ]
    }

    pub fn center(&self) -> (i64, i64) {
        (self.x + self.side / 2, self.y + self.side / 2)
    }

    /// Input-unit coordinates `(x, y, side)`.
    pub fn input_coords(&self) -> (i64, i64, i64) {
        (
            self.x / WORLD_SCALE,
            self.y / WORLD_SCALE,
            self.side / WORLD_SCALE,
        )
    }

    pub fn storing_cell(&self) -> Cell {
        storing_cell(self)
    }
}

impl Region for Square {
    fn rect(&self) -> Rect {
        Rect::square(self.x, self.y, self.side)
    }
}

/// Dyadic grid cell `[ix·2^level, (ix+1)·2^level] × [iy·2^level, (iy+1)·2^level]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Cell {
    pub level: u8,
    pub ix: u64,
    pub iy: u64,
}

impl Cell {
    pub fn new(level: u8, ix: u64, iy: u64) -> Self {
        Self { level, ix, iy }
    }

    pub fn side(&self) -> i64 {
        1i64 << self.level
    }

    pub fn x_lo(&self) -> i64 {
        (self.ix << self.level) as i64
    }

    pub fn y_lo(&self) -> i64 {
        (self.iy << self.level) as i64
    }

    pub fn parent(&self) -> Cell {
        Cell::new(self.level + 1, self.ix >> 1, self.iy >> 1)
    }

    /// Ancestor (or self) at `level`; `level` must not be below `self.level`.
    pub fn ancestor(&self, level: u8) -> Cell {
        debug_assert!(level >= self.level);
        let shift = level - self.level;
        if shift >= 64 {
            return Cell::new(level, 0, 0);
        }
        Cell::new(level, self.ix >> shift, self.iy >> shift)
    }

    /// `self` is an ancestor of `other` or equal to it.
    pub fn is_ancestor_or_self(&self, other: &Cell) -> bool {
        self.level >= other.level && other.ancestor(self.level) == *self
    }

    /// Index 0..4 of the child quadrant of `self` that contains the strict
    /// descendant `desc`.
    pub fn quadrant_of(&self, desc: &Cell) -> usize {
        debug_assert!(self.level > desc.level);
        let child = desc.ancestor(self.level - 1);
        ((child.ix & 1) | ((child.iy & 1) << 1)) as usize
    }

    /// Pre-order position in the infinite quadtree: Morton code of the lower-left
    /// corner, ancestors before descendants.
    pub fn morton_key(&self) -> (u128, std::cmp::Reverse<u8>) {
        (
            interleave(self.x_lo() as u64, self.y_lo() as u64),
            std::cmp::Reverse(self.level),
        )
    }

    /// Same order as `morton_key`, decided by the highest differing bit.
    pub fn morton_cmp(&self, other: &Cell) -> Ordering {
        let (x1, y1) = (self.x_lo() as u64, self.y_lo() as u64);
        let (x2, y2) = (other.x_lo() as u64, other.y_lo() as u64);
        let (dx, dy) = (x1 ^ x2, y1 ^ y2);
        if dx == 0 && dy == 0 {
            return other.level.cmp(&self.level);
        }
        // y bits sit above x bits of the same weight.
        if dy < dx && dy < (dx ^ dy) {
            x1.cmp(&x2)
        } else {
            y1.cmp(&y2)
        }
    }

    /// Lowest common ancestor of two cells.
    pub fn lca(a: &Cell, b: &Cell) -> Cell {
        let xa = a.x_lo() as u64;
        let xb = b.x_lo() as u64;
        let ya = a.y_lo() as u64;
        let yb = b.y_lo() as u64;
        let bits = |v: u64| (64 - v.leading_zeros()) as u8;
        let level = a
            .level
            .max(b.level)
            .max(bits(xa ^ xb))
            .max(bits(ya ^ yb));
        a.ancestor(level)
    }

    /// The level-`level` cell containing `(x, y)`, taking the bottom-left
    /// cell when the point lies on grid lines.
    pub fn at(level: u8, x: i64, y: i64) -> Cell {
        let s = 1i64 << level;
        let pick = |v: i64| -> u64 {
            let i = v.div_euclid(s);
            if v.rem_euclid(s) == 0 && i > 0 {
                (i - 1) as u64
            } else {
                i as u64
            }
        };
        Cell::new(level, pick(x), pick(y))
    }
}

impl Region for Cell {
    fn rect(&self) -> Rect {
        Rect::square(self.x_lo(), self.y_lo(), self.side())
    }
}

impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Cells order by Morton pre-order.
impl Ord for Cell {
    fn cmp(&self, other: &Self) -> Ordering {
        self.morton_cmp(other)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} {} {})", self.level, self.ix, self.iy)
    }
}

fn spread32(v: u32) -> u64 {
    let mut v = v as u64;
    v = (v | (v << 16)) & 0x0000_FFFF_0000_FFFF;
    v = (v | (v << 8)) & 0x00FF_00FF_00FF_00FF;
    v = (v | (v << 4)) & 0x0F0F_0F0F_0F0F_0F0F;
    v = (v | (v << 2)) & 0x3333_3333_3333_3333;
    (v | (v << 1)) & 0x5555_5555_5555_5555
}

fn spread(v: u64) -> u128 {
    spread32(v as u32) as u128 | (spread32((v >> 32) as u32) as u128) << 64
}

fn interleave(x: u64, y: u64) -> u128 {
    spread(x) | (spread(y) << 1)
}

fn floor_log2(v: i64) -> u8 {
    debug_assert!(v > 0);
    (63 - v.leading_zeros()) as u8
}

/// The largest dyadic cell that contains the square's center and is itself
/// contained in the square; bottom-left on ties.
pub fn storing_cell(sq: &Square) -> Cell {
    let (cx, cy) = sq.center();
    let region = sq.rect();
    let mut level = floor_log2(sq.side);
    loop {
        let s = 1i64 << level;
        let options = |c: i64| -> Vec<u64> {
            let i = c / s;
            if c % s == 0 && i > 0 {
                vec![(i - 1) as u64, i as u64]
            } else {
                vec![i as u64]
            }
        };
        // Candidates in (iy, ix) order, so the first fit is the bottom-left one.
        for iy in options(cy) {
            for ix in options(cx) {
                let cell = Cell::new(level, ix, iy);
                if region.contains(&cell.rect()) {
                    return cell;
                }
            }
        }
        // A level with 2^level <= side/2 always fits; side >= 4 in world units.
        debug_assert!(level > 0, "no storing cell for {sq:?}");
        level -= 1;
    }
}

/// The cell grown by a factor 5 about its center.
pub fn scale5(c: &Cell) -> Rect {
    let s = c.side();
    let (x, y) = (c.x_lo(), c.y_lo());
    Rect::new(x - 2 * s, x + 3 * s, y - 2 * s, y + 3 * s)
}

/// The 5×5 block of same-level cells centered on the storing cell, clipped to
/// the non-negative quadrant.
pub fn neighborhood(sq: &Square) -> Vec<Cell> {
    let c = storing_cell(sq);
    let mut out = Vec::with_capacity(25);
    for dy in -2i64..=2 {
        for dx in -2i64..=2 {
            let ix = c.ix as i64 + dx;
            let iy = c.iy as i64 + dy;
            if ix >= 0 && iy >= 0 {
                out.push(Cell::new(c.level, ix as u64, iy as u64));
            }
        }
    }
    out
}
