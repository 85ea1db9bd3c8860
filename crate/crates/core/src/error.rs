use thiserror::Error;

/// Errors raised by the library. Each variant maps to a stable name used by
/// the CLI and the C ABI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("operator is singular (zero pivot at elimination step {pivot})")]
    SingularOperator { pivot: usize },

    #[error("norm matrix is not symmetric positive definite (pivot {pivot} = {value:e})")]
    NotSpd { pivot: usize, value: f64 },

    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sketch has {columns} columns but the preconditioner basis has {basis} elements")]
    SketchTooSmall { columns: usize, basis: usize },

    #[error("kappa bound {kappa} is below the smallest admissible value {threshold}")]
    KappaTooSmall { kappa: f64, threshold: f64 },

    #[error("{what} did not converge after {iterations} iterations")]
    ConvergenceFailure {
        what: &'static str,
        iterations: usize,
        estimate: Vec<f64>,
    },

    #[error("reduced system is singular at parameter {point:?}")]
    SingularReducedSystem { point: Vec<f64> },

    #[error("preconditioned test space is rank deficient")]
    DegenerateTestSpace,

    #[error("random problem generation failed after {attempts} attempts")]
    GenerationFailed { attempts: usize },

    #[error("matrix file contains no entries: {0}")]
    EmptyMatrix(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable identifier of the variant.
    pub fn name(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "Dimension",
            Error::SingularOperator { .. } => "SingularOperator",
            Error::NotSpd { .. } => "NotSPD",
            Error::InvalidSize(_) => "InvalidSize",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::SketchTooSmall { .. } => "SketchTooSmall",
            Error::KappaTooSmall { .. } => "KappaTooSmall",
            Error::ConvergenceFailure { .. } => "ConvergenceFailure",
            Error::SingularReducedSystem { .. } => "SingularReducedSystem",
            Error::DegenerateTestSpace => "DegenerateTestSpace",
            Error::GenerationFailed { .. } => "GenerationFailed",
            Error::EmptyMatrix(_) => "EmptyMatrix",
            Error::Parse { .. } => "Parse",
            Error::Config { .. } => "Config",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
