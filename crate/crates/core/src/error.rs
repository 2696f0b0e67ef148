use thiserror::Error;

/// Errors raised by model construction, filtering, cost evaluation and the
/// text formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("{what} row {index} is not stochastic (row sum {sum})")]
    NonStochasticRow {
        what: String,
        index: String,
        sum: f64,
    },

    #[error("{what} entry {index} is not a probability: {value}")]
    InvalidProbability {
        what: String,
        index: String,
        value: f64,
    },

    #[error("{name} out of {range}: {value}")]
    ParameterOutOfRange {
        name: &'static str,
        range: &'static str,
        value: f64,
    },

    #[error("{kind} index {index} out of range (< {bound})")]
    InvalidIndex {
        kind: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("observation {obs} has zero probability under the current belief")]
    ImpossibleObservation { obs: usize },

    #[error("belief coordinate {index} = {value} is below the interior floor {floor}")]
    BoundaryBelief {
        index: usize,
        value: f64,
        floor: f64,
    },

    #[error("linear cost requires beta == lambda (beta = {beta}, lambda = {lambda})")]
    WeightMismatch { beta: f64, lambda: f64 },

    #[error("observation sequence has zero likelihood under the model")]
    ZeroLikelihood,

    #[error("enumeration needs {atoms} atoms, guard is {limit}")]
    TooLarge { atoms: f64, limit: f64 },

    #[error("invalid belief: {0}")]
    InvalidBelief(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid policy table: {0}")]
    InvalidPolicy(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
