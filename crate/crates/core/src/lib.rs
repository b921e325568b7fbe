//! Fully-dynamic connectivity for intersection graphs of axis-aligned squares.

pub mod conflict;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod hlt;
pub mod matching;
pub mod oracle;
pub mod quadtree;
pub mod registry;
pub mod replay;
pub mod trace;
pub mod workload;

pub use error::{Error, Result};
