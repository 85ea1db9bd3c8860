//! Interpolation of the inverse of a parameter-dependent matrix.
//!
//! A preconditioner P_m(ξ) = Σ_i λ_i(ξ) A(ξ_i)⁻¹ is built from factorized
//! samples of A(ξ). Its coefficients minimize a sketched Frobenius residual
//! ‖(I − P A(ξ))V‖_F, optionally under constraints that guarantee
//! invertibility or a condition-number bound. An empirical interpolation
//! surrogate makes the online coefficient evaluation independent of n.

pub mod bench;
pub mod eim;
pub mod error;
pub mod experiment;
pub mod greedy;
pub mod linalg;
pub mod lu;
pub mod mmio;
pub mod operators;
pub mod precond;
pub mod reduction;
pub mod rng;
pub mod sketch;
pub mod sparse;

pub use error::{Error, Result};
