use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to point at the
/// offending node, coefficient, or system without a debugger.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain extent on axis {axis} must have positive width, got [{lo}, {hi}]")]
    BadExtent { axis: usize, lo: f64, hi: f64 },

    #[error("resolution must be at least 3 nodes per axis, got {n}")]
    BadResolution { n: usize },

    #[error("empty interior after masking")]
    EmptyInterior,

    #[error("masked interior is disconnected ({components} components)")]
    DisconnectedInterior { components: usize },

    #[error("shrink margin exceeds half the domain width")]
    MarginTooLarge,

    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("ellipticity failure at {location}: min eigenvalue of sym(a) is {lambda_min:.3e}")]
    Ellipticity { location: String, lambda_min: f64 },

    #[error("Peclet number {value:.3} >= 1 at {location}; refine the grid or shrink the drift")]
    Peclet { location: String, value: f64 },

    #[error("coefficient dimension mismatch: field is {field_dim}D, grid is {grid_dim}D")]
    DimensionMismatch { field_dim: usize, grid_dim: usize },

    #[error("non-finite value in {what} at {location}")]
    NonFinite { what: String, location: String },

    #[error("ergodic scheme requires a potential V")]
    MissingPotential,

    #[error("adjoint is only defined for uniform cell-volume weights")]
    NonUniformWeights,

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("beta must be nonnegative here; negative beta enters only through the exponential-moment entry points")]
    NegativeBeta,

    #[error("linear system is numerically singular (min pivot {min_pivot:.3e}, max pivot {max_pivot:.3e})")]
    Singular { min_pivot: f64, max_pivot: f64 },

    #[error("solve residual {residual:.3e} exceeds bound {bound:.3e}")]
    ResidualTooLarge { residual: f64, bound: f64 },

    #[error("constraint vector vanishes on the allowed support")]
    InfeasibleConstraint,

    #[error("source pairing is degenerate: |sum w u xi| = {normalizer:.3e} below {bound:.3e}; the value identity divides by it")]
    DegenerateSource { normalizer: f64, bound: f64 },

    #[error("trial-space mask length {mask_len} does not match interior size {interior}")]
    MaskMismatch { mask_len: usize, interior: usize },

    #[error("weighted operator is not symmetric (asymmetry {asym:.3e}); the exponential-moment route needs b = 0 and symmetric a")]
    NotSymmetrizable { asym: f64 },

    #[error("eigenvalue iteration did not converge: {detail}")]
    EigenNoConverge { detail: String },

    #[error("diffusion matrix is not positive definite at {location}")]
    NotSpd { location: String },

    #[error("start point {location} is outside the domain")]
    StartOutsideDomain { location: String },

    #[error("invalid simulation plan: {detail}")]
    BadPlan { detail: String },

    #[error("overflow computing Gibbs weights at {location}")]
    GibbsOverflow { location: String },

    #[error("drift field is not divergence-free: |div b| = {value:.3e} at {location}")]
    NotDivergenceFree { location: String, value: f64 },

    #[error("matrix ordering certification failed at {location}: directional defect {defect:.3e}")]
    CertificationFailed { location: String, defect: f64 },

    #[error("drift dominates diffusion at gamma = {gamma}: symmetric part lost positive definiteness")]
    DriftDominated { gamma: f64 },

    #[error("numerical inconsistency: {detail}")]
    Inconsistent { detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn loc1(x: f64) -> String {
    format!("x = {x:.6}")
}

pub(crate) fn loc2(x: f64, y: f64) -> String {
    format!("(x, y) = ({x:.6}, {y:.6})")
}

pub(crate) fn loc(p: &[f64; 2], dim: usize) -> String {
    if dim == 1 {
        loc1(p[0])
    } else {
        loc2(p[0], p[1])
    }
}
