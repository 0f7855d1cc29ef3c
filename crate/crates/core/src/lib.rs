//! Verification laboratory for the spectral behavior of dense random
//! combinatorial matrices.
//!
//! The central object is the ensemble of m x n 0/1 matrices whose rows are
//! drawn independently and uniformly from the set of vectors with exactly d
//! ones. The crate provides exact and Monte Carlo tooling around that
//! ensemble: sampling and enumeration, dense spectral analysis (smallest
//! singular value, condition number, centered operator norm, exact
//! singularity), a certificate construction that upper-bounds the smallest
//! singular value through a projection witness, lattice anticoncentration
//! diagnostics for unit vectors, concentration checks for row inner
//! products, closed-form moment formulas with enumeration oracles, and
//! reproducible parallel experiment drivers with CSV/JSON/SVG reporting.

pub mod concentration;
pub mod error;
pub mod experiments;
pub mod extreal;
pub mod geometry;
pub mod moments;
pub mod report;
pub mod sampler;
pub mod spectral;

mod linalg;

pub use error::Error;
pub use extreal::ExtReal;
pub use sampler::{CombMatrix, RowVector, SeedSpec};

/// Convenient result alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
