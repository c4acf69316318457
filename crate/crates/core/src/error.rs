use thiserror::Error;

/// Errors raised by the toolkit.
///
/// Variants name the condition of the control problem that was violated, so
/// front ends can render them without further translation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown identifier `{name}` at line {line}, column {column}")]
    UnknownIdentifier {
        name: String,
        line: usize,
        column: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("control set U is empty: {0}")]
    EmptyControlSet(String),

    #[error("domain error in {func}({arg}) at t={t}, x={x:?}, u={u:?}")]
    Domain {
        func: &'static str,
        arg: f64,
        t: f64,
        x: Vec<f64>,
        u: Vec<f64>,
    },

    #[error("weight `{label}` is not positive at t={t} (value {value})")]
    NonPositiveWeight { label: String, t: f64, value: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("weight `{0}` declares no tail bound and its numeric tail does not stabilize")]
    MissingTailBound(String),

    #[error("invalid exponent p={0}: the dual pair requires 1 < p < inf")]
    InvalidExponent(f64),

    #[error("tube radius collapses below machine resolution at t={t}")]
    EmptyTube { t: f64 },

    #[error("state constraint g{j} violated at t={t} (value {value})")]
    InfeasibleState { j: usize, t: f64, value: f64 },

    #[error("solution blows up near t={t}")]
    BlowUp { t: f64 },

    #[error("fundamental matrix ill-conditioned at t={t} (condition number {cond:e})")]
    IllConditioned { t: f64, cond: f64 },

    #[error("adjoint representation integrand does not decay at the horizon (t={t})")]
    DivergentTail { t: f64 },

    #[error("measure atom for g{j} at t={t} lies off the active set (|g|={value})")]
    AtomOffActiveSet { j: usize, t: f64, value: f64 },

    #[error("invalid measure multiplier: {0}")]
    InvalidMeasure(String),

    #[error("Pontryagin function unbounded above at t={t}: increases along u{coord} towards {direction}")]
    UnboundedAbove {
        t: f64,
        coord: usize,
        direction: &'static str,
    },

    #[error("invalid interval [{t0}, {t1}]")]
    InvalidInterval { t0: f64, t1: f64 },

    #[error("parameter alpha={alpha} outside [0, 1/m] (m={m})")]
    AlphaOutOfRange { alpha: f64, m: usize },

    #[error("cannot concentrate: minimal excluded mass {mass:e} is not below epsilon={epsilon:e}")]
    CannotConcentrate { mass: f64, epsilon: f64 },

    #[error("weak mode requires a neighbourhood radius eta")]
    MissingEta,

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
