use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero-norm vector cannot be normalized")]
    DegenerateVector,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("cost matrix contains non-finite entries")]
    InvalidCost,
    #[error("invalid similarity graph: {0}")]
    InvalidGraph(String),
    #[error("weight {0} is outside [0, 1]")]
    InvalidWeight(f64),
    #[error("problem of size {size} exceeds the brute-force limit of {limit}")]
    TooLarge { size: usize, limit: usize },
    #[error("class index {index} out of range for {classes} classes")]
    InvalidClass { index: usize, classes: usize },
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("no descriptors for class {0}")]
    MissingDescriptors(String),
    #[error("class name must be non-empty")]
    InvalidClassName,
    #[error("embedding dimension must be at least 2, got {0}")]
    InvalidDim(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("epoch {epoch} exceeds schedule length {max}")]
    InvalidEpoch { epoch: usize, max: usize },
    #[error("harmonic mean undefined when both inputs are zero")]
    DegenerateMetric,
    #[error("training batch contains a {0} sample")]
    SplitViolation(String),
    #[error("fetching descriptions failed for {}: {message}", classes.join(", "))]
    Fetch {
        classes: Vec<String>,
        message: String,
    },
    #[error("malformed chat-completion response for {class}: {message}")]
    Protocol { class: String, message: String },
    #[error("invalid input at {pointer}: {message}")]
    Schema { pointer: String, message: String },
    #[error("{}: {source}", path.display())]
    File {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
