//! Signed-graph embeddings from a damped spring-force simulation, with
//! gradients through the unrolled solver, training and link-sign metrics.

pub mod bench;
pub mod error;
pub mod eval;
pub mod force;
pub mod graph;
pub mod gsn;
pub mod matrix;
pub mod rng;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
pub use matrix::{Matrix, Real};
