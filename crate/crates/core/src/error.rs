use std::fmt;

/// One violated parameter invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: &'static str,
    pub value: f64,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (got {} = {})", self.message, self.field, self.value)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameters: {}", join(.0))]
    Validation(Vec<Violation>),

    #[error("{what} must be finite (got {value})")]
    NonFinite { what: &'static str, value: f64 },

    #[error("{0}")]
    InvalidInput(String),

    #[error("no bifurcation for non-positive Kerr (kerr = {0})")]
    NoBifurcation(f64),

    #[error("cubic root polish failed: |residual| = {residual:e} > {bound:e} at n_c = {n_c}")]
    RootPolish { n_c: f64, residual: f64, bound: f64 },

    #[error("empty detuning grid")]
    EmptyGrid,

    #[error("detuning grid is not monotone in the {0} direction at index {1}")]
    NonMonotoneGrid(&'static str, usize),

    #[error("spectrum of an unstable branch (n_c = {n_c}) is undefined")]
    UnstableBranch { n_c: f64 },

    #[error("parametric instability: no mechanical steady state (gamma_eff = {gamma_eff:e} rad/s)")]
    ParametricInstability { gamma_eff: f64 },

    #[error("linearised dynamics unstable: {mode} mode has eigenvalue real part {re:e} rad/s")]
    ModeInstability { mode: &'static str, re: f64 },

    #[error("linear solve failed: {0}")]
    Singular(String),

    #[error("config error at line {line}, key `{key}`: {message}")]
    Config { line: usize, key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Coarse classification used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Validation(_)
            | Error::NonFinite { .. }
            | Error::InvalidInput(_)
            | Error::NoBifurcation(_)
            | Error::EmptyGrid
            | Error::NonMonotoneGrid(..)
            | Error::Config { .. } => ErrorKind::Validation,
            Error::RootPolish { .. } | Error::Singular(_) => ErrorKind::Convergence,
            Error::UnstableBranch { .. }
            | Error::ParametricInstability { .. }
            | Error::ModeInstability { .. } => ErrorKind::Instability,
            Error::Io(_) | Error::Csv(_) => ErrorKind::Io,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Convergence,
    Instability,
    Io,
}

pub type Result<T> = std::result::Result<T, Error>;

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

pub(crate) fn ensure_finite(what: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { what, value })
    }
}
