use thiserror::Error;

/// Errors from state construction, table generation, SDP assembly and
/// certification.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mean photon number must be nonnegative, got {0}")]
    NegativeMu(f64),

    #[error("overlap delta must lie in [0, 1], got {0}")]
    BadDelta(f64),

    #[error("need at least two inputs, got {0}")]
    TooFewInputs(usize),

    #[error("parameter {name} = {value} outside {range}")]
    BadParameter {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("Gram matrix is numerically indefinite at delta = {0}")]
    IndefiniteGram(f64),

    #[error("probability table is not row-stochastic: row {row} sums to {sum}")]
    NotStochastic { row: usize, sum: f64 },

    #[error("probability table entry ({row}, {col}) = {value} outside [0, 1]")]
    BadProbability { row: usize, col: usize, value: f64 },

    #[error("table has {table_n} inputs but state family has {states_n}")]
    DimensionMismatch { table_n: usize, states_n: usize },

    #[error("strategy count {count} exceeds cap {cap}; enable symmetry reduction or reduce n/d")]
    StrategyCapExceeded { count: u128, cap: u64 },

    #[error("input symbol {x} never occurs in the trial sequence")]
    MissingInput { x: usize },

    #[error("trial sequence is empty")]
    NoTrials,

    #[error("table is not invariant under the symmetry group (deviation {0:.3e}); reduction refused")]
    NotSymmetric(f64),

    #[error("dual certificate rejected: worst LMI eigenvalue {0:.3e} after repair")]
    CertificateInfeasible(f64),

    #[error("certificate shape mismatch: {0}")]
    CertificateShape(String),

    #[error("guessing probability {p} outside (0, 1]")]
    BadPguess { p: f64 },

    #[error("sweep grid must be nonempty and strictly increasing")]
    BadGrid,

    #[error("bracket [{lo}, {hi}] is empty or reversed")]
    BadBracket { lo: f64, hi: f64 },

    #[error("Toeplitz seed has {got} bits, need input + output - 1 = {want}")]
    SeedLength { got: usize, want: usize },

    #[error("raw bit sequence is empty")]
    EmptyRaw,

    #[error("solver failed: {0}")]
    Solver(#[from] blocksdp::SolveError),

    #[error("assembled problem is malformed: {0}")]
    Assembly(#[from] blocksdp::ProblemError),
}

pub type Result<T> = std::result::Result<T, Error>;
