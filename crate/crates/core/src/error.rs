use thiserror::Error;

use crate::geometry::{Cell, SquareId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("invalid square {id}: {reason}")]
    InvalidSquare { id: u64, reason: &'static str },
    #[error("square {0} is already present")]
    DuplicateSquare(SquareId),
    #[error("unknown square {0}")]
    UnknownSquare(SquareId),
    #[error("cell {0} is not in the quadtree")]
    MissingCell(Cell),
    #[error("cell {0} has no marks to remove")]
    MarkUnderflow(Cell),
    #[error("cell {0} is not marked by any square")]
    UnmarkedCell(Cell),
    #[error("entry {0} is already stored")]
    DuplicateEntry(String),
    #[error("entry {0} is not stored")]
    MissingEntry(String),
    #[error("entry {key} is already in conflict set {set}")]
    AlreadyMember { key: String, set: u64 },
    #[error("entry {key} is not in conflict set {set}")]
    NotMember { key: String, set: u64 },
    #[error("square {0} is not matched in this pair")]
    NotMatched(SquareId),
    #[error("vertex {0} is already present")]
    DuplicateVertex(Cell),
    #[error("unknown vertex {0}")]
    UnknownVertex(Cell),
    #[error("vertex {0} still has incident edges")]
    VertexNotIsolated(Cell),
    #[error("edge {0}-{1} is not active")]
    InactiveEdge(Cell, Cell),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
