use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("vector lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("vector has length {0}, at least 2 is required")]
    TooShort(usize),
    #[error("vector is constant; correlation is undefined")]
    ConstantVector,
    #[error("need at least 2 learners, got {0}")]
    TooFewLearners(usize),
    #[error("matrix is not symmetric (entry ({row}, {col}) differs by {diff:e})")]
    NotSymmetric { row: usize, col: usize, diff: f64 },
    #[error("matrix must be square with at least one row")]
    NotSquare,
    #[error("{name} = {value} is outside [{lower}, {upper}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("summary (N={n}, r_tl={r_tl}, r_ll={r_ll}) violates the correlation bounds")]
    InfeasibleSummary { n: usize, r_tl: f64, r_ll: f64 },
    #[error("accuracy profile is degenerate (radicand {0} <= 0)")]
    DegenerateProfile(f64),
    #[error("majority vote needs an odd jury size, got {0}")]
    EvenJury(usize),
    #[error("homogeneous ensemble is infeasible: {0}")]
    InfeasibleSpec(String),
    #[error("pairwise vote correlation {target} cannot be matched by the latent model (range [{lower}, {upper}])")]
    UnachievableCorrelation { target: f64, lower: f64, upper: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss node has shape {rows}x{cols}, expected a scalar")]
    NotScalar { rows: usize, cols: usize },
    #[error("truth column {0} is constant in every class; no correlation signal")]
    ConstantTruthColumn(usize),
    #[error("empty data")]
    EmptyData,
    #[error("training set needs at least 2 rows, got {0}")]
    EmptyTraining(usize),
    #[error("feature subset size {requested} exceeds feature count {available}")]
    TooManyFeatures { requested: usize, available: usize },
    #[error("base learner factory failed: {0}")]
    FactoryFailure(String),
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },
    #[error("label column {0} not found")]
    MissingLabelColumn(String),
    #[error("dataset has {0} usable rows, at least 2 are required")]
    DatasetTooSmall(usize),
    #[error("label {label} out of range for {classes} classes")]
    OutOfRangeLabel { label: usize, classes: usize },
    #[error("k = {k} folds requested for {n} samples")]
    KTooLarge { k: usize, n: usize },
    #[error("alpha = {0} must lie strictly inside (0, 1)")]
    DegenerateAlpha(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
