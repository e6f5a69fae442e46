use crate::Cplx;
use thiserror::Error;

/// Every failure mode surfaced by the library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("root iteration did not converge after {iterations} iterations (max residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("numerator and denominator vanish together near {at}")]
    IndeterminateAtCommonRoot { at: Cplx },

    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("normalization impossible: {0}")]
    NormalizationImpossible(String),

    #[error("normalization mode A requires a hint designating a Fatou periodic point")]
    HintRequired,

    #[error("map has no assigned normalization kind")]
    KindRequired,

    #[error("point {x} is too close to critical value {value}")]
    NearCriticalValue { x: Cplx, value: Cplx },

    #[error("point {x} lies within {distance:e} of the postcritical set (outside the domain)")]
    DomainViolation { x: Cplx, distance: f64 },

    #[error("critical orbit derivative vanishes at step {step}")]
    ZeroOrbitDerivative { step: usize },

    #[error("Abel series coefficients did not decay within {horizon} terms")]
    SlowDecay { horizon: usize },

    #[error("residue extraction differs between probes by {difference:e}")]
    ProbeMismatch { difference: f64 },

    #[error("z = {z} coincides with critical point {critical}")]
    CriticalZ { z: Cplx, critical: Cplx },

    #[error("contour integral at infinity unstable across radii (difference {difference:e})")]
    RadiusInstability { difference: f64 },

    #[error("no repelling fixed point available to seed inverse iteration")]
    SeedNotRepelling,

    #[error("declared pole {pole} lies inside the integration region")]
    PoleInRegion { pole: Cplx },

    #[error("derivative vanishes at {x}")]
    CriticalPoint { x: Cplx },

    #[error("orbit of {x} passes through a critical point at step {step}")]
    CriticalOrbit { x: Cplx, step: usize },

    #[error("field support is unbounded for this kernel")]
    UnboundedSupport,

    #[error("map is not Lattès-like: {0}")]
    NotLattesLike(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
