//! Szegő-class membership tests for canonical Hamiltonian systems, Krein strings and
//! Dirac potentials, plus the wave dynamics that go with them.
//!
//! The crate is organised by object:
//!
//! * [`measures`]: spectral measures, Szegő integrals, outer functions, entropy.
//! * [`canonical`]: canonical systems `JΘ' = zHΘ`, eikonal, determinant sums, Weyl function.
//! * [`string`]: Krein strings, the string/Hamiltonian bijection, transfer matrices.
//! * [`dirac`]: Dirac potentials, `N₀`, scalar and dispersion criteria, WvN regions.
//! * [`evolution`]: lattice wave simulation, spectral synthesis, front diagnostics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod canonical;
pub mod dirac;
mod error;
pub mod evolution;
pub mod linalg;
pub mod measures;
pub mod num;
pub mod piecewise;
pub mod report;
pub mod string;

pub use error::{KwError, Result};
pub use num_complex::Complex64;
pub use report::{SzegoReport, Verdict};
