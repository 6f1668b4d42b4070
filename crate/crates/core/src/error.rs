use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("mean {index} has norm {norm}, expected 1")]
    NonUnitMean { index: usize, norm: f64 },
    #[error("mean Gram matrix is degenerate (smallest eigenvalue {min_eig:e})")]
    DegenerateGram { min_eig: f64 },
    #[error("bad class probabilities: {0}")]
    BadProbs(String),
    #[error("xor means are not orthogonal (mu.nu = {dot:e})")]
    NonOrthogonalXorMeans { dot: f64 },
    #[error("two-layer width {width} is below the minimum of 4")]
    WidthTooSmall { width: usize },
    #[error("hidden unit {unit} has an exactly zero preactivation")]
    ZeroPreactivation { unit: usize },
    #[error("empty sample set")]
    EmptySampleSet,
    #[error("non-finite parameters at step {step}")]
    NonFinite { step: usize },
    #[error("eigensolver did not converge in {max_iter} iterations")]
    NoConvergence { max_iter: usize },
    #[error("matrix of size {n} exceeds the dense cap {cap}")]
    TooLarge { n: usize, cap: usize },
    #[error("matrix is not symmetric (max asymmetry {asym:e})")]
    NotSymmetric { asym: f64 },
    #[error("zero vector")]
    ZeroVector,
    #[error("zero matrix")]
    ZeroMatrix,
    #[error("block indices ({b}, {c}) out of range for {n} blocks")]
    BadIndices { b: usize, c: usize, n: usize },
    #[error("row {row} of W is zero")]
    ZeroRow { row: usize },
    #[error("perpendicular Gram is not PSD (smallest eigenvalue {min_eig:e})")]
    NonPsdRperp { min_eig: f64 },
    #[error("beta = {beta} outside (0, 1/8)")]
    BetaOutOfRange { beta: f64 },
    #[error("bad partition: {0}")]
    BadPartition(String),
    #[error("fixed point residual {residual:e} exceeds tolerance")]
    ResidualTooLarge { residual: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("wrong model: {0}")]
    WrongModel(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn at(self, stage: &str) -> Error {
        Error::Stage { stage: stage.to_string(), source: Box::new(self) }
    }
}
