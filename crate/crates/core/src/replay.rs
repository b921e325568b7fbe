//! Executes traces against the engine, optionally shadowed by the oracle.

use serde::Serialize;

use crate::engine::{Engine, Stats};
use crate::error::Error;
use crate::geometry::{Square, SquareId};
use crate::oracle::Oracle;
use crate::trace::{parse_trace_bytes, ParseError, TraceOp};

pub const SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, Default)]
pub struct ReplayOptions {
    /// Compare every query with the oracle.
    pub check: bool,
    /// Also compare all structural state with the oracle after every update.
    pub check_deep: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("line {line}: {source}")]
    Op { line: usize, source: Error },
}

impl ReplayError {
    pub fn line(&self) -> usize {
        match self {
            ReplayError::Parse(e) => e.line,
            ReplayError::Op { line, .. } => *line,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Summary {
    pub schema: u32,
    pub ops: u64,
    pub inserts: u64,
    pub deletes: u64,
    pub queries: u64,
    pub true_answers: u64,
    pub checked: bool,
    pub mismatches: u64,
    /// Largest per-update ψ.
    pub max_psi: f64,
    pub max_contained: usize,
    pub max_perimeter: usize,
    pub total_contained: u64,
    pub total_perimeter: u64,
    #[serde(rename = "final")]
    pub final_state: Stats,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepOutcome {
    pub answer: Option<bool>,
    pub mismatch: Option<String>,
}

#[derive(Debug)]
pub struct Replayer {
    engine: Engine,
    oracle: Option<Oracle>,
    deep: bool,
    summary: Summary,
}

impl Replayer {
    pub fn new(opts: ReplayOptions) -> Self {
        let checked = opts.check || opts.check_deep;
        Self {
            engine: Engine::new(),
            oracle: checked.then(Oracle::new),
            deep: opts.check_deep,
            summary: Summary {
                schema: SCHEMA,
                checked,
                max_psi: 1.0,
                ..Summary::default()
            },
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn step(&mut self, line: usize, op: &TraceOp) -> Result<StepOutcome, ReplayError> {
        let fail = |source| ReplayError::Op { line, source };
        let mut out = StepOutcome::default();
        match *op {
            TraceOp::Insert { id, x, y, side } => {
                let sq = Square::from_input(id, x, y, side).map_err(fail)?;
                self.engine.insert(sq).map_err(fail)?;
                if let Some(o) = &mut self.oracle {
                    o.insert(sq).map_err(fail)?;
                }
                self.summary.inserts += 1;
            }
            TraceOp::Delete { id } => {
                self.engine.delete(SquareId(id)).map_err(fail)?;
                if let Some(o) = &mut self.oracle {
                    o.delete(SquareId(id)).map_err(fail)?;
                }
                self.summary.deletes += 1;
            }
            TraceOp::Query { a, b } => {
                let got = self.engine.connected(SquareId(a), SquareId(b)).map_err(fail)?;
                if let Some(o) = &self.oracle {
                    let want = o.o_connected(SquareId(a), SquareId(b)).map_err(fail)?;
                    if got != want {
                        out.mismatch = Some(format!("line {line}: query {a} {b}: engine {got}, oracle {want}"));
                    }
                }
                self.summary.queries += 1;
                self.summary.true_answers += got as u64;
                out.answer = Some(got);
            }
        }
        if out.answer.is_none() {
            let w = self.engine.last_update();
            let s = &mut self.summary;
            s.max_psi = s.max_psi.max(w.psi);
            s.max_contained = s.max_contained.max(w.contained);
            s.max_perimeter = s.max_perimeter.max(w.perimeter);
            s.total_contained += w.contained as u64;
            s.total_perimeter += w.perimeter as u64;
            if self.deep {
                if let Err(e) = self.engine.check_deep(self.oracle.as_ref().unwrap()) {
                    out.mismatch = Some(format!("line {line}: structural check: {e}"));
                }
            }
        }
        self.summary.ops += 1;
        self.summary.mismatches += out.mismatch.is_some() as u64;
        Ok(out)
    }

    pub fn summary(&self) -> Summary {
        Summary {
            final_state: self.engine.stats(),
            ..self.summary.clone()
        }
    }
}

/// Everything a full replay produced.
#[derive(Clone, Debug, Default)]
pub struct Replay {
    pub answers: Vec<bool>,
    pub mismatches: Vec<String>,
    pub summary: Summary,
}

pub fn replay_ops(ops: &[(usize, TraceOp)], opts: ReplayOptions) -> Result<Replay, ReplayError> {
    let mut r = Replayer::new(opts);
    let mut answers = Vec::new();
    let mut mismatches = Vec::new();
    for (line, op) in ops {
        let out = r.step(*line, op)?;
        answers.extend(out.answer);
        mismatches.extend(out.mismatch);
    }
    Ok(Replay {
        answers,
        mismatches,
        summary: r.summary(),
    })
}

pub fn replay_bytes(bytes: &[u8], opts: ReplayOptions) -> Result<Replay, ReplayError> {
    replay_ops(&parse_trace_bytes(bytes)?, opts)
}
