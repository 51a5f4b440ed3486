use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid cone: {0}")]
    InvalidCone(String),

    #[error("point is not in the cone (distance {distance:.3e})")]
    NotInCone { distance: f64 },

    #[error("multiplier is not a normal vector at the point (residual {residual:.3e})")]
    NotNormal { residual: f64 },

    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },

    #[error("unknown variable `{name}` at position {position} (dimension is {n})")]
    UnknownVariable { name: String, position: usize, n: usize },

    #[error("non-integer exponent at position {position}")]
    NonIntegerExponent { position: usize },

    #[error("division by zero during evaluation")]
    DivisionByZero,

    #[error("enumeration budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    #[error("KKT residual {residual:.3e} exceeds gate {gate:.1e}")]
    NotKktPoint { residual: f64, gate: f64 },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, got })
        }
    }
}
