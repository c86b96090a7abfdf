use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    #[error("leaf index error: {0}")]
    Index(String),

    #[error("arity mismatch: expected {expected} arguments, got {got}")]
    Arity { expected: usize, got: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("point outside domain: {0}")]
    Domain(String),

    #[error("evaluation failed: {0}")]
    Eval(String),

    #[error("trajectory left the domain box at t = {t}")]
    Escape { t: f64 },

    #[error("integrator step size underflow: {0}")]
    Tolerance(String),

    #[error("inverse did not converge: {0}")]
    Inverse(String),

    #[error("Richardson extrapolation diverges (error estimate {error_estimate:e})")]
    Noise { error_estimate: f64 },

    #[error("derivative order {0} is not supported (maximum is 5)")]
    OrderTooHigh(usize),

    #[error("matrix is singular")]
    Singular,

    #[error("matrix exponential overflow")]
    Overflow,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Errors caused by the flow leaving its local domain or hitting a pole.
    /// Verification drivers react to these by shrinking the step.
    pub fn is_locality(&self) -> bool {
        matches!(
            self,
            Error::Escape { .. } | Error::Domain(_) | Error::Eval(_) | Error::Inverse(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
