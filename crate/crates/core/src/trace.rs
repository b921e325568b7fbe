//! Text traces: one operation per line, fields separated by whitespace,
//! `#` starts a comment.
//!
//! ```text
//! insert 1 0 0 2
//! insert 2 1 1 2
//! query 1 2      # true
//! delete 2
//! ```

use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceOp {
    Insert { id: u64, x: i64, y: i64, side: i64 },
    Delete { id: u64 },
    Query { a: u64, b: u64 },
}

impl fmt::Display for TraceOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceOp::Insert { id, x, y, side } => write!(f, "insert {id} {x} {y} {side}"),
            TraceOp::Delete { id } => write!(f, "delete {id}"),
            TraceOp::Query { a, b } => write!(f, "query {a} {b}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub msg: String,
}

fn field<T: FromStr>(tok: Option<&str>, name: &str) -> Result<T, String> {
    let tok = tok.ok_or_else(|| format!("missing {name}"))?;
    tok.parse()
        .map_err(|_| format!("bad {name} {tok:?}"))
}

/// Parse one line. Blank and comment-only lines give `Ok(None)`.
pub fn parse_line(line: &str) -> Result<Option<TraceOp>, String> {
    let body = line.split('#').next().unwrap_or("");
    let mut toks = body.split_whitespace();
    let Some(verb) = toks.next() else {
        return Ok(None);
    };
    let op = match verb {
        "insert" => TraceOp::Insert {
            id: field(toks.next(), "id")?,
            x: field(toks.next(), "x")?,
            y: field(toks.next(), "y")?,
            side: field(toks.next(), "side")?,
        },
        "delete" => TraceOp::Delete {
            id: field(toks.next(), "id")?,
        },
        "query" => TraceOp::Query {
            a: field(toks.next(), "id")?,
            b: field(toks.next(), "id")?,
        },
        other => return Err(format!("unknown operation {other:?}")),
    };
    if let Some(extra) = toks.next() {
        return Err(format!("trailing field {extra:?}"));
    }
    Ok(Some(op))
}

/// Parse a whole trace, keeping 1-based line numbers.
pub fn parse_trace(text: &str) -> Result<Vec<(usize, TraceOp)>, ParseError> {
    let mut ops = Vec::new();
    for (i, line) in text.lines().enumerate() {
        match parse_line(line) {
            Ok(Some(op)) => ops.push((i + 1, op)),
            Ok(None) => {}
            Err(msg) => return Err(ParseError { line: i + 1, msg }),
        }
    }
    Ok(ops)
}

pub fn parse_trace_bytes(bytes: &[u8]) -> Result<Vec<(usize, TraceOp)>, ParseError> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse_trace(text),
        Err(e) => {
            let line = 1 + bytes[..e.valid_up_to()].iter().filter(|b| **b == b'\n').count();
            Err(ParseError {
                line,
                msg: "invalid UTF-8".into(),
            })
        }
    }
}

pub fn format_trace(ops: &[TraceOp]) -> String {
    let mut out = String::with_capacity(ops.len() * 20);
    for op in ops {
        out.push_str(&op.to_string());
        out.push('\n');
    }
    out
}

/// Insert/delete/query proportions, normalized to sum to 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mix {
    pub insert: f64,
    pub delete: f64,
    pub query: f64,
}

impl Default for Mix {
    fn default() -> Self {
        Self {
            insert: 0.45,
            delete: 0.25,
            query: 0.30,
        }
    }
}

impl FromStr for Mix {
    type Err = String;

    /// `i:d:q` with non-negative weights, e.g. `45:25:30` or `0.5:0.2:0.3`.
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("mix {s:?} is not i:d:q"));
        }
        let mut w = [0.0f64; 3];
        for (slot, p) in w.iter_mut().zip(&parts) {
            let v: f64 = p.trim().parse().map_err(|_| format!("bad mix weight {p:?}"))?;
            if !v.is_finite() || v < 0.0 {
                return Err(format!("bad mix weight {p:?}"));
            }
            *slot = v;
        }
        let sum: f64 = w.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(format!("mix {s:?} has no positive weight"));
        }
        Ok(Self {
            insert: w[0] / sum,
            delete: w[1] / sum,
            query: w[2] / sum,
        })
    }
}

impl fmt::Display for Mix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.insert, self.delete, self.query)
    }
}
