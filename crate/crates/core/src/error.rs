use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {what} = {value} is outside the admissible domain")]
    Domain { what: &'static str, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{op} did not converge within {iterations} iterations")]
    Convergence { op: &'static str, iterations: usize },

    #[error("quadrature failed on [{a}, {b}]: estimated error {error:e} exceeds tolerance after {subdivisions} subdivisions")]
    Quadrature {
        a: f64,
        b: f64,
        error: f64,
        subdivisions: usize,
    },

    #[error("second derivative at the maximiser is {0}, expected a strictly negative curvature")]
    CurvatureSign(f64),

    #[error("{rejected} of {requested} draws fell outside the model domain (more than half); sigma*sqrt(dt) is too large")]
    ExcessiveRejection { rejected: usize, requested: usize },

    #[error("price became non-positive ({price}) at step {step}; reduce dt_step")]
    PositivityBreach { step: usize, price: f64 },

    #[error("supply and demand curves are parallel")]
    ParallelCurves,

    #[error("curves do not intersect at a positive price (intersection at {0})")]
    NoPositiveIntersection(f64),

    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("non-uniform time grid at row {row}; resample to a uniform spacing before estimating volatility")]
    NonUniformGrid { row: usize },

    #[error("non-positive price {price} at row {row}")]
    NonPositivePrice { row: usize, price: f64 },

    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },

    #[error("required key `{0}` is missing")]
    RequiredKey(String),

    #[error("line {line}: key `{key}` expects {expected}, got `{value}`")]
    TypeMismatch {
        key: String,
        expected: &'static str,
        value: String,
        line: usize,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
