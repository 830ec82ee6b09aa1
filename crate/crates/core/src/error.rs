use thiserror::Error;

/// Errors raised across the crate.
///
/// Variants are grouped by the stage that produces them. Numerical
/// verification failures that are still well-formed results (a solver that ran
/// out of sweeps, a continuation that stalled) are reported through the result
/// types instead of this enum.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid needs at least {min} nodes per axis, got {got}")]
    GridTooSmall { min: usize, got: usize },

    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),

    #[error("polygon is not convex (edge {edge} turns the wrong way)")]
    NotConvex { edge: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("negative value {value} at node ({i}, {j})")]
    NegativeValue { i: usize, j: usize, value: f64 },

    #[error("negative z coordinate {0} in singular distance")]
    NegativeZ(f64),

    #[error("boundary data must be strictly positive, found {value} at sample {index}")]
    NonPositiveBoundary { index: usize, value: f64 },

    #[error("forcing violates 0 < lambda < h < 1/lambda: h = {value} at node ({i}, {j})")]
    ForcingOutOfBounds { i: usize, j: usize, value: f64 },

    #[error("not enough admissible node pairs for a Holder quotient ({0} found)")]
    TooFewPairs(usize),

    #[error("radial integration failed: {0}")]
    Integration(String),

    #[error("domain reaches radius {domain}, beyond the radial profile (R = {profile})")]
    DomainExceedsProfile { domain: f64, profile: f64 },

    #[error("{fallbacks} of {nodes} nodes needed the convexity fallback")]
    ConvexityLost { fallbacks: usize, nodes: usize },

    #[error("vanishing set is empty")]
    EmptyVanishingSet,

    #[error("interface polyline is open or touches the domain boundary")]
    OpenInterface,

    #[error("pressure is not monotone along hodograph line {line} (y = {y})")]
    NonMonotoneLine { line: usize, y: f64 },

    #[error("hodograph patch escapes the positivity set: {0}")]
    PatchEscapes(String),

    #[error("no admissible amplitude c1 for the supersolution: {0}")]
    NoAdmissibleAmplitude(String),

    #[error("boundary dominance violated: phi = {phi} < psi = {psi} at ({x}, {y})")]
    BoundaryDominance { x: f64, y: f64, phi: f64, psi: f64 },

    #[error("continuation parameter t = {0} outside [0, 1]")]
    ParameterOutOfRange(f64),

    #[error("field shapes do not match")]
    ShapeMismatch,

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
