//! Harmonic analysis on two-step nilpotent Lie groups and their compact
//! nilmanifolds: exact group/algebra arithmetic in exponential coordinates,
//! the dual-side geometry of the skew forms B(lambda), Hermite-basis
//! realizations of the irreducible representations, semiclassical
//! quantization on the Heisenberg nilmanifold, and operator-valued measures
//! with localization/flow-invariance diagnostics.
//!
//! The algebraic core (`algebra`, `dual`, `hermite`, `quadrature`) is generic
//! over the scalar type through the [`Real`] trait (f32/f64). The grid and
//! quantization modules (`manifold`, `symbols`, `measures`) are f64: they are
//! dominated by sparse eigensolves and quadrature where a second scalar type
//! buys nothing.

pub mod algebra;
pub mod dual;
pub mod error;
pub mod hermite;
pub mod linalg;
pub mod manifold;
pub mod measures;
pub mod quadrature;
pub mod scalar;
pub mod symbols;
pub mod verify;

pub use error::Error;
pub use scalar::Real;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;

// Concrete f64 aliases for the generic core.
pub type Algebra = algebra::StepTwoAlgebra<f64>;
pub type Point = algebra::GroupPoint<f64>;
pub type BlockForm = dual::BlockForm<f64>;
pub type RepOperator = hermite::RepOperator<f64>;
