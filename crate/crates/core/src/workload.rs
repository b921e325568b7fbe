//! Deterministic pseudorandom traces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::INPUT_LIMIT;
use crate::trace::{Mix, TraceOp};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ParamError {
    #[error("psi-max {0} is not a power of two")]
    PsiNotPowerOfTwo(u64),
    #[error("psi-max {0} is too large")]
    PsiTooLarge(u64),
    #[error("box side {0} must be positive and at most {max}", max = INPUT_LIMIT)]
    BadBox(i64),
}

#[derive(Clone, Debug)]
pub struct GenParams {
    /// Inserts issued before the mixed phase.
    pub n: usize,
    /// Length of the mixed phase.
    pub ops: usize,
    pub psi_max: u64,
    pub seed: u64,
    pub mix: Mix,
    /// Positions are drawn from `[0, box_side)`; derived from the expected
    /// population when absent.
    pub box_side: Option<i64>,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            n: 100,
            ops: 1000,
            psi_max: 16,
            seed: 0,
            mix: Mix::default(),
            box_side: None,
        }
    }
}

fn check_psi(psi_max: u64) -> Result<(), ParamError> {
    if !psi_max.is_power_of_two() {
        return Err(ParamError::PsiNotPowerOfTwo(psi_max));
    }
    if psi_max > 1 << 30 {
        return Err(ParamError::PsiTooLarge(psi_max));
    }
    Ok(())
}

/// Mean squared side of the log-uniform side distribution on `[1, psi]`.
fn mean_area(psi: f64) -> f64 {
    if psi <= 1.0 {
        1.0
    } else {
        (psi * psi - 1.0) / (2.0 * psi.ln())
    }
}

/// Total square area over box area for the default box. Near this density
/// random pairs are connected often enough to make queries informative.
const COVERAGE: f64 = 1.5;

fn default_box(population: f64, psi: f64) -> i64 {
    let side = (population.max(1.0) * mean_area(psi) / COVERAGE).sqrt().ceil() as i64;
    side.max(4 * psi as i64).min(INPUT_LIMIT / 2)
}

fn resolve_box(explicit: Option<i64>, population: f64, psi: u64) -> Result<i64, ParamError> {
    match explicit {
        Some(b) if b <= 0 || b > INPUT_LIMIT - psi as i64 => Err(ParamError::BadBox(b)),
        Some(b) => Ok(b),
        None => Ok(default_box(population, psi as f64)),
    }
}

struct Gen {
    rng: ChaCha8Rng,
    psi_max: u64,
    box_side: i64,
    next_id: u64,
    live: Vec<u64>,
}

impl Gen {
    fn side(&mut self) -> i64 {
        if self.psi_max == 1 {
            return 1;
        }
        let u = self.rng.random_range(0.0..=(self.psi_max as f64).log2());
        (2f64.powf(u).round() as i64).clamp(1, self.psi_max as i64)
    }

    fn insert(&mut self) -> TraceOp {
        let side = self.side();
        let op = TraceOp::Insert {
            id: self.next_id,
            x: self.rng.random_range(0..self.box_side),
            y: self.rng.random_range(0..self.box_side),
            side,
        };
        self.live.push(self.next_id);
        self.next_id += 1;
        op
    }
}

/// `n` inserts followed by `ops` operations drawn from the mix. Deletes and
/// queries fall back to inserts while nothing is live.
pub fn generate(p: &GenParams) -> Result<Vec<TraceOp>, ParamError> {
    check_psi(p.psi_max)?;
    let population = p.n as f64 + p.ops as f64 * (p.mix.insert - p.mix.delete).max(0.0);
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(p.seed),
        psi_max: p.psi_max,
        box_side: resolve_box(p.box_side, population, p.psi_max)?,
        next_id: 1,
        live: Vec::new(),
    };
    let mut out = Vec::with_capacity(p.n + p.ops);
    for _ in 0..p.n {
        out.push(g.insert());
    }
    for _ in 0..p.ops {
        let r: f64 = g.rng.random();
        let op = if r < p.mix.insert || g.live.is_empty() {
            g.insert()
        } else if r < p.mix.insert + p.mix.delete {
            let i = g.rng.random_range(0..g.live.len());
            TraceOp::Delete { id: g.live.swap_remove(i) }
        } else {
            let a = g.live[g.rng.random_range(0..g.live.len())];
            let b = g.live[g.rng.random_range(0..g.live.len())];
            TraceOp::Query { a, b }
        };
        out.push(op);
    }
    Ok(out)
}

/// One square of side `psi_max` (id 1) and a unit square at its center
/// (id 2); the unit square is deleted, `n` more squares of side `psi_max`
/// arrive, and the unit square is reinserted.
pub fn aspect_spike(n: usize, psi_max: u64, seed: u64, box_side: Option<i64>) -> Result<Vec<TraceOp>, ParamError> {
    check_psi(psi_max)?;
    let big = psi_max as i64;
    let box_side = match box_side {
        Some(b) => b,
        None => big.saturating_mul(2 * (n as f64 + 1.0).sqrt().ceil() as i64),
    };
    if box_side <= 0 || box_side > INPUT_LIMIT - big {
        return Err(ParamError::BadBox(box_side));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ax, ay) = (rng.random_range(0..box_side), rng.random_range(0..box_side));
    let small = TraceOp::Insert {
        id: 2,
        x: ax + big / 2,
        y: ay + big / 2,
        side: 1,
    };
    let mut out = vec![
        TraceOp::Insert { id: 1, x: ax, y: ay, side: big },
        small,
        TraceOp::Delete { id: 2 },
    ];
    for i in 0..n as u64 {
        out.push(TraceOp::Insert {
            id: 3 + i,
            x: rng.random_range(0..box_side),
            y: rng.random_range(0..box_side),
            side: big,
        });
    }
    out.push(small);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::format_trace;
    use std::collections::BTreeSet;

    #[test]
    fn same_seed_same_bytes() {
        let p = GenParams { seed: 11, ..GenParams::default() };
        assert_eq!(format_trace(&generate(&p).unwrap()), format_trace(&generate(&p).unwrap()));
        let q = GenParams { seed: 12, ..GenParams::default() };
        assert_ne!(generate(&p).unwrap(), generate(&q).unwrap());
    }

    #[test]
    fn psi_one_gives_unit_sides() {
        let p = GenParams { psi_max: 1, ..GenParams::default() };
        for op in generate(&p).unwrap() {
            if let TraceOp::Insert { side, .. } = op {
                assert_eq!(side, 1);
            }
        }
    }

    #[test]
    fn rejects_bad_params() {
        let p = GenParams { psi_max: 12, ..GenParams::default() };
        assert_eq!(generate(&p), Err(ParamError::PsiNotPowerOfTwo(12)));
        let p = GenParams { psi_max: 0, ..GenParams::default() };
        assert!(generate(&p).is_err());
        let p = GenParams { box_side: Some(0), ..GenParams::default() };
        assert!(generate(&p).is_err());
    }

    #[test]
    fn generated_traces_are_well_formed() {
        let p = GenParams { n: 20, ops: 2000, psi_max: 1 << 10, seed: 5, ..GenParams::default() };
        let mut live = BTreeSet::new();
        let (mut lo, mut hi) = (i64::MAX, 0);
        for op in generate(&p).unwrap() {
            match op {
                TraceOp::Insert { id, x, y, side } => {
                    assert!(live.insert(id));
                    assert!(x >= 0 && y >= 0 && x + side <= INPUT_LIMIT && y + side <= INPUT_LIMIT);
                    lo = lo.min(side);
                    hi = hi.max(side);
                }
                TraceOp::Delete { id } => assert!(live.remove(&id)),
                TraceOp::Query { a, b } => assert!(live.contains(&a) && live.contains(&b)),
            }
        }
        assert!(lo == 1 && hi > 512 && hi <= 1 << 10, "{lo} {hi}");
    }

    #[test]
    fn aspect_spike_shape() {
        let ops = aspect_spike(5, 64, 1, None).unwrap();
        assert_eq!(ops.len(), 9);
        let TraceOp::Insert { x, y, side: 64, .. } = ops[0] else { panic!() };
        assert_eq!(ops[1], TraceOp::Insert { id: 2, x: x + 32, y: y + 32, side: 1 });
        assert_eq!(ops[2], TraceOp::Delete { id: 2 });
        assert!(ops[3..8].iter().all(|o| matches!(o, TraceOp::Insert { side: 64, .. })));
        assert_eq!(ops[8], ops[1]);
    }
}
