use thiserror::Error;

/// Crate-wide error type. Validation failures name the offending coordinate.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("{matrix} row {row} sums to {sum:.17e}, expected 1 within {tol:.1e}")]
    RowNotStochastic {
        matrix: String,
        row: usize,
        sum: f64,
        tol: f64,
    },

    #[error("{matrix}[{row}][{col}] = {value:.17e} is negative")]
    NegativeEntry {
        matrix: String,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error("{matrix}[{row}][{col}] = {value} is not finite")]
    NonFiniteEntry {
        matrix: String,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error("metric violates the triangle inequality at ({i},{j},{k}): d({i},{k}) > d({i},{j}) + d({j},{k})")]
    MetricViolation { i: usize, j: usize, k: usize },

    #[error("metric is not symmetric with zero diagonal at ({i},{j})")]
    MetricAsymmetry { i: usize, j: usize },

    #[error("{what} has shape {got}, expected {expected}")]
    BadShape {
        what: String,
        got: String,
        expected: String,
    },

    #[error("parameter {name} = {value} out of range ({admissible})")]
    ParamOutOfRange {
        name: String,
        value: f64,
        admissible: String,
    },

    #[error("unknown parameter {name:?} (admissible: {admissible})")]
    UnknownParam { name: String, admissible: String },

    #[error("discretized kernel row {row} has mass {mass:.3e} < 1e-9 before renormalization")]
    NumericalUnderflow { row: usize, mass: f64 },

    #[error("length mismatch: {left} vs {right} in {context}")]
    LengthMismatch {
        context: String,
        left: usize,
        right: usize,
    },

    #[error("transport problem infeasible: {reason}")]
    Infeasible { reason: String },

    #[error("distinct states {i} and {j} are at metric distance zero")]
    ZeroDistance { i: usize, j: usize },

    #[error("zero likelihood: observation {obs} has probability < 1e-300 under the current prior")]
    ZeroLikelihood { obs: usize },

    #[error("support violation: prior component {index} is positive under mu but zero under nu")]
    SupportViolation { index: usize },

    #[error("degenerate pair: W1 distance {distance:.3e} below 1e-12")]
    DegeneratePair { distance: f64 },

    #[error("state space too large: {count} states exceeds cap {cap}")]
    TooLarge { count: u128, cap: usize },

    #[error("not converged after {iterations} iterations (last step {last_step:.3e}, threshold {threshold:.3e})")]
    NotConverged {
        iterations: usize,
        last_step: f64,
        threshold: f64,
    },

    #[error("invalid regime: {reason}")]
    InvalidRegime { reason: String },

    #[error("io failure on {path}: {detail}")]
    Io { path: String, detail: String },

    #[error("malformed model file {path}: {detail}")]
    Parse { path: String, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;
