//! Frequency, critical-set and covering tools for harmonic polynomials
//! and for solutions of variable-coefficient elliptic equations in the plane.
//!
//! Exact work happens over `BigRational`; everything that samples space
//! (sets, volumes, coverings, the elliptic solver) works in `f64`.

pub mod config;
pub mod corpus;
pub mod covering;
pub mod elliptic;
pub mod error;
pub mod frequency;
pub mod geometry;
pub mod hhp;
pub mod numeric;
pub mod poly;
pub mod sampling;

pub use error::{Error, Result};
pub use poly::{ExactPoly, Monomial, Rational};
