//! The narrative guide, included chapter by chapter so that
//! `cargo test --doc` compiles and runs every code block in the book.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/graphs-and-pairs.md")]
pub mod graphs_and_pairs {}

#[doc = include_str!("../../../book/src/moves.md")]
pub mod moves {}

#[doc = include_str!("../../../book/src/matrix-operations.md")]
pub mod matrix_operations {}

#[doc = include_str!("../../../book/src/canonical-form.md")]
pub mod canonical_form {}

#[doc = include_str!("../../../book/src/invariants.md")]
pub mod invariants {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
