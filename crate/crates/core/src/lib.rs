//! Coordinate ascent variational inference for Bayesian PCA, with the tools needed to study
//! its convergence: rank-one dynamics, matrix-normal divergences and stationary-point diagnostics.
//!
//! The model is `X = Z W' + E` with `Z` having standard-normal rows, `W` rows `N(0, Λ⁻¹)` and
//! noise precision `τ0`. The variational family is a product of matrix normals
//! `q_W = N(μ_W, I_d ⊗ Σ_W)` and `q_Z = N(μ_Z, I_n ⊗ Σ_Z)`.

pub mod cavi;
pub mod divergence;
pub mod error;
pub mod io;
pub mod k1;
pub mod linalg;
pub mod model;
pub mod recipes;
pub mod stationary;
pub mod stats;

pub use cavi::{CaviConfig, InitSpec, MatrixNormal, TraceLog, TraceRecord, VariationalState};
pub use error::{BpcaError, Result};
pub use model::{DataMatrix, GenerativeDraw, Hyper, Provenance, SpectralDecomposition};
