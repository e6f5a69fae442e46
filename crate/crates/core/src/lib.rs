//! Numerical toolkit for the transfer (Ruelle–Thurston) operator of a
//! rational map, its resolvents, and the holomorphic line fields they
//! generate on the Julia set.
//!
//! The crate is organised bottom-up:
//!
//! * [`poly`]: complex polynomials, Horner evaluation, simultaneous root finding.
//! * [`rational`]: rational maps on the sphere, critical portraits, fixed points,
//!   Möbius normalizations and postcritical clouds.
//! * [`transfer`]: preimages, the operators `T` and `|T|`, truncated resolvents
//!   over the test-function catalog and the quadratic Abel formula.
//! * [`residue`]: contour-integral residue data and identity verification.
//! * [`grid`]: cell models of Julia sets, fundamental sets, pullback
//!   partitions and area integration.
//! * [`linefield`]: line fields, pushforward, canonical fields, Cauchy
//!   transform vectors and integral diagnostics.

pub mod error;
pub mod grid;
pub mod linefield;
pub mod poly;
pub mod rational;
pub mod residue;
pub mod sampling;
pub mod transfer;

pub use error::{Error, Result};
pub use grid::{CellSet, FundamentalSetApprox, Grid, Region, Scheme};
pub use linefield::{FVector, LineField};
pub use poly::{Poly, Root};
pub use rational::{MapKind, Mobius, RationalMap, SpherePoint};
pub use residue::{ResidueData, VerificationReport};
pub use sampling::Estimate;
pub use transfer::{Resolvent, ResolventCtrl, ResolventEval, TestFunction};

/// Complex scalar used throughout.
pub type Cplx = num_complex::Complex64;

#[cfg(test)]
pub(crate) fn c(re: f64, im: f64) -> Cplx {
    Cplx::new(re, im)
}
