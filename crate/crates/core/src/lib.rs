//! Elephant random walks on directed graphs: memory-matrix construction,
//! spectral analysis, exact and Monte Carlo simulation, exact moments,
//! limiting covariances and statistical verification.

pub mod error;
pub mod experiment;
pub mod gaussian;
pub mod graph;
pub mod limits;
pub mod linalg;
pub mod moments;
pub mod rng;
pub mod simulator;
pub mod special;
pub mod spectral;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use graph::{memory_matrix, DirectedGraph, MemoryMatrix, WalkConfig};
pub use spectral::{analyze, classify, Regime, RegimeLabel, Spectrum};
