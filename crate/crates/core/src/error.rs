use thiserror::Error;

/// Everything that can go wrong inside the codec.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NonSymmetric { asymmetry: f64 },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error(
        "eigensolver did not converge within {sweeps} sweeps (off-diagonal norm {off_norm:e})"
    )]
    NoConvergence { sweeps: usize, off_norm: f64 },
    #[error("row {row} has zero norm")]
    ZeroRow { row: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not orthogonal (max |QᵀQ - I| = {deviation:e})")]
    NotOrthogonal { deviation: f64 },
    #[error("bit stack underflow: need {needed} bits, have {available}")]
    Underflow { needed: usize, available: usize },
    #[error("bit length {bit_length} exceeds {bytes} bytes")]
    LengthMismatch { bit_length: u64, bytes: usize },
    #[error("gram matrix of {tensor} in layer {layer} is rank deficient (margin {margin:e})")]
    RankDeficient {
        layer: usize,
        tensor: &'static str,
        margin: f64,
    },
    #[error("invalid model dimensions: {0}")]
    InvalidDims(String),
    #[error("token {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("sequence of {len} tokens exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("layer {layer} out of range (model has {layers} layers)")]
    LayerOutOfRange { layer: usize, layers: usize },
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated")]
    TruncatedFile,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("malformed container: {0}")]
    BadContainer(String),
    #[error("invalid codec configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
