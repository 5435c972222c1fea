//! A move calculus on finite-vertex directed multigraphs.
//!
//! The crate implements four families of graph moves (outsplitting and its
//! inverse, in-edge redistribution among same-future vertices, and vertex
//! reduction with its inverse), compiles matrix-level row, column, and
//! antenna operations on the `(D, B)` pair encoding into replayable move
//! scripts, brings any pair into canonical form, and computes the pointed
//! K0 invariant through exact Smith normal forms so that every
//! transformation can be checked against the invariant it must preserve.
//!
//! ```
//! use movecalc::{pair::DbPair, Ext};
//!
//! // One vertex with three loops: B = (2), D = (1).
//! let p = DbPair::new(vec![vec![Ext::Fin(2)]], vec![1]).unwrap();
//! let k = movecalc::ktheory::pointed_k0(&p).unwrap();
//! assert_eq!(k.factors, vec![2.into()]); // the group Z/2
//!
//! // Row addition compiles to a script of primitive moves and replays.
//! let q = DbPair::new(
//!     vec![vec![Ext::Fin(0), Ext::Fin(1)], vec![Ext::Fin(1), Ext::Fin(0)]],
//!     vec![1, 1],
//! )
//! .unwrap();
//! let done = movecalc::matops::row_add_basic(&q, 0, 1).unwrap();
//! assert_eq!(done.result.d, vec![1, 2]);
//! ```
//!
//! A narrative guide with worked examples lives under `book/`; its code
//! blocks double as doc-tests through the [`guide`] module.

// Index loops mirror the matrix algebra throughout.
#![allow(clippy::needless_range_loop)]

pub mod canonical;
pub mod cli;
pub mod ext;
pub mod graph;
pub mod guide;
pub mod ktheory;
pub mod matops;
pub mod moves;
pub mod pair;

pub use ext::Ext;
pub use graph::{Graph, VertexClass};
pub use moves::{Move, MoveScript};
pub use pair::DbPair;

/// Errors across the crate: arithmetic faults, invariant violations,
/// precondition failures of moves and operations, and replay failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("arithmetic error: {0}")]
    Arithmetic(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid pair: {0}")]
    InvalidPair(String),
    #[error("index {index} out of range for {len} vertices")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("script step {step} failed: {reason}")]
    ScriptStep { step: usize, reason: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("step budget exhausted after {0} moves; this indicates a driver defect")]
    BudgetExceeded(usize),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
