use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A caller broke a documented precondition (non-unit direction, negative radius, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),

    #[error("{what} = {value} is outside the admissible range {range}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        range: String,
    },

    #[error("{name} = {value} is below the minimum {min}")]
    Resolution {
        name: &'static str,
        value: usize,
        min: usize,
    },

    #[error("operation is not available in dimension {0}")]
    UnsupportedDimension(usize),

    #[error("evaluation point s = {s} lies within the endpoint margin of [{h_minus}, {h_plus}]")]
    EndpointProximity { s: f64, h_minus: f64, h_plus: f64 },

    #[error("points are too close to define a bisecting hyperplane (separation {0:e})")]
    DegeneratePair(f64),

    #[error("radial data are under-resolved: spectral tail {tail:e} exceeds {limit:e}")]
    NonConvergedFilter { tail: f64, limit: f64 },

    #[error("design matrix is rank deficient ({rank} < {needed}); use more directions")]
    InsufficientDirections { rank: usize, needed: usize },

    #[error("fitted quadratic form is not positive definite (smallest eigenvalue {0:e})")]
    NonConvexFit(f64),

    #[error("the kernel constant cannot be identified: {0}")]
    UnidentifiableConstant(String),

    #[error("Neumann iteration diverged after {} steps", trace.len())]
    Divergence { trace: Vec<f64> },

    #[error("point lies outside the domain")]
    OutOfDomain,

    #[error("direction is irregular: Gaussian curvature {curvature:e} at the tangency point")]
    IrregularDirection { curvature: f64 },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("format error: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
