use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("transition matrix must be square with n >= 2 (got {rows} rows, row {bad_row} has {cols} columns)")]
    NotSquare {
        rows: usize,
        bad_row: usize,
        cols: usize,
    },

    #[error("chain needs at least 2 pages, got {0}")]
    TooFewPages(usize),

    #[error("row {row} sums to {sum} (tolerance 1e-9)")]
    NonStochasticRow { row: usize, sum: f64 },

    #[error("entry ({row}, {col}) = {value} is negative or not finite")]
    InvalidEntry { row: usize, col: usize, value: f64 },

    #[error("initial distribution has length {got}, expected {expected}")]
    InitLengthMismatch { expected: usize, got: usize },

    #[error("initial distribution is not a probability vector (sum {sum})")]
    InvalidInit { sum: f64 },

    #[error("page {page} is out of range for {n} pages")]
    PageOutOfRange { page: usize, n: usize },

    #[error("parameter regime violated: {0}")]
    Regime(String),

    #[error("linear system for pair ({p}, {q}) is singular (pivot {pivot:e} at column {col})")]
    SingularSystem {
        p: usize,
        q: usize,
        col: usize,
        pivot: f64,
    },

    #[error("alpha solution for pair ({p}, {q}) leaves [0,1] by {excess:e} (> 1e-7)")]
    AlphaOutOfRange { p: usize, q: usize, excess: f64 },

    #[error("dominating distribution LP optimum {value} exceeds 1/2")]
    Infeasible { value: f64 },

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error("invalid cache: {0}")]
    InvalidCache(String),

    #[error("policy `{policy}` needs {what}")]
    MissingContext { policy: String, what: &'static str },

    #[error("policy `{policy}` returned page {page}, which is not in the cache")]
    EvictedNotInCache { policy: String, page: usize },

    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),

    #[error("state space of {needed} state-steps exceeds the budget of {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },

    #[error("state not present in the OPT table: {0}")]
    StateNotInTable(String),

    #[error("policy `{0}` is not memoryless; exact evolution needs a (cache, request) kernel")]
    NonMemoryless(String),

    #[error("probability mass drifted to {0} during exact evolution")]
    ProbabilityDrift(f64),

    #[error("sequence of length {len} is shorter than the required {needed}")]
    SequenceTooShort { len: usize, needed: usize },

    #[error("perturbation bound requires gamma * delta < 1 (got {0})")]
    ConditionViolated(f64),

    #[error("eps bound {0} >= 1/2 makes the competitive guarantee vacuous")]
    GuaranteeVacuous(f64),

    #[error("trace has {0} requests; at least 2 are needed")]
    TraceTooShort(usize),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(String),
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
