//! Probabilistic Datalog with partially known correlations between input facts.
//!
//! The pipeline is: [`frontend::parse`] a program, ground it into a
//! [`grounder::DerivationGraph`], then compute probability bounds for output
//! facts either exactly ([`optimizer`]), approximately ([`approx`] driven by
//! [`corrtypes`]) or to within a chosen precision ([`refine`]). [`engine`]
//! wires the stages together.

pub mod approx;
pub mod constraints;
pub mod corrtypes;
pub mod engine;
pub mod frontend;
pub mod grounder;
pub mod lp;
pub mod optimizer;
pub mod oracle;
pub mod refine;
pub mod symexpr;
#[cfg(test)]
mod testutil;


pub use engine::{solve, Mode, Options, Report};
pub use frontend::{parse, Program};
