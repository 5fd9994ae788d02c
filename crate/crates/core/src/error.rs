use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("graph is disconnected: {} components, sizes {:?}", .components.len(), .components.iter().map(Vec::len).collect::<Vec<_>>())]
    Disconnected { components: Vec<Vec<usize>> },

    #[error("vertex {0} has zero degree")]
    ZeroDegree(usize),

    #[error("kernel {0} is identically zero and cannot be normalized")]
    ZeroKernel(usize),

    #[error("vertex map is not injective: index {0} used twice")]
    NonInjectiveMap(usize),

    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("no observed entries to interpolate from")]
    EmptyObservation,

    #[error("singular system: {0}")]
    Singular(String),

    #[error("non-finite objective in {step} at iteration {iteration}")]
    NonFinite { step: &'static str, iteration: usize },

    #[error("zero model; lower mu2/mu3")]
    ZeroModel,

    #[error("membership floor mu = {0} is not positive; local memberships must dominate")]
    MembershipFloor(f64),

    #[error("kernels are not band-limited: component {0} has no exact zeros at the top of the spectrum")]
    NotBandLimited(usize),

    #[error("kernel support is empty over the given frequencies (center {center}, halfwidth {halfwidth})")]
    EmptySupport { center: f64, halfwidth: f64 },

    #[error("cannot partition {n} vertices into {parts} connected parts")]
    Partition { n: usize, parts: usize },

    #[error("invalid reference to zero matrix: {0}")]
    ZeroReference(&'static str),

    #[error("csv error at line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
